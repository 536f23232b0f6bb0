from typing import Dict, Iterable, Optional, Sequence, Union
from pathlib import Path
import csv
import json
import logging
import platform
from datetime import datetime

import meshio
import numpy as np
import scipy
import scipy.io

from ..mesh.mesh import Mesh, format_mesh_text
from ..utils.validators import validate_output_dir

logger = logging.getLogger(__name__)


def format_value(value) -> str:
    """Integers as is, floats with 17 significant digits, None as an empty field."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _pad3(vectors: np.ndarray) -> np.ndarray:
    return np.hstack([vectors, np.zeros((vectors.shape[0], 1))])


class FileHandler:
    """
    Writes the artifacts of a run under one output directory.

    Layout::

        <output_dir>/meshes/      mesh_####.vtk, mesh_####.txt
        <output_dir>/solutions/   sol_####.vtk
        <output_dir>/reports/     report_####.csv, *_####.mtx
        <output_dir>/history.csv
        <output_dir>/manifest

    Attributes:
        output_dir (Path): Root of the layout
    """

    def __init__(self, output_dir: Union[str, Path] = "output"):
        self.output_dir = Path(output_dir)
        self.mesh_dir = self.output_dir / "meshes"
        self.solution_dir = self.output_dir / "solutions"
        self.report_dir = self.output_dir / "reports"

        self._initialize_directories()

    def _initialize_directories(self) -> None:
        """Create the output layout if it doesn't exist."""
        validate_output_dir(self.output_dir)
        for directory in (self.mesh_dir, self.solution_dir, self.report_dir):
            directory.mkdir(parents=True, exist_ok=True)

    @property
    def history_path(self) -> Path:
        return self.output_dir / "history.csv"

    @property
    def manifest_path(self) -> Path:
        return self.output_dir / "manifest"

    def _write_vtk(self, path: Path, mesh: Mesh, point_data: Dict[str, np.ndarray],
                   cell_data: Dict[str, np.ndarray]) -> Path:
        vtk_mesh = meshio.Mesh(
            _pad3(mesh.vertices),
            [("triangle", mesh.triangles)],
            point_data=point_data,
            cell_data={name: [values] for name, values in cell_data.items()},
        )
        try:
            meshio.write(path, vtk_mesh, file_format="vtk42", binary=False)
        except Exception as e:
            logger.error(f"Error writing {path}: {e}")
            raise
        logger.debug(f"VTK written to {path}")
        return path

    def write_mesh(self, mesh: Mesh, iteration: int, regions: Optional[np.ndarray] = None) -> Path:
        """
        Write the mesh as legacy ASCII VTK with region and level cell data.

        Args:
            mesh: Mesh
            iteration: Index used in the file name
            regions: Element regions, the mesh element tags by default

        Returns:
            Path to the saved file
        """
        regions = mesh.element_tags if regions is None else regions
        return self._write_vtk(
            self.mesh_dir / f"mesh_{iteration:04d}.vtk",
            mesh,
            {},
            {"region": np.asarray(regions, dtype=np.int32), "level": np.asarray(mesh.level, dtype=np.int32)},
        )

    def write_solution(
        self,
        mesh: Mesh,
        iteration: int,
        pressure: np.ndarray,
        velocity: np.ndarray,
        nodal_pressure: np.ndarray,
        eta_sq: Optional[np.ndarray] = None,
        regions: Optional[np.ndarray] = None,
        l_h: Optional[np.ndarray] = None,
    ) -> Path:
        """
        Write cell pressure, centroid velocity, indicators and the nodal pressure.

        Args:
            mesh: Mesh
            iteration: Index used in the file name
            pressure: (nt,) p_h
            velocity: (nt, 2) u_h at the centroids
            nodal_pressure: (nv,) averaged p_h
            eta_sq: (nt,) marking indicators
            regions: (nt,) element regions
            l_h: (nt, 3) postprocessed pressure at the element vertices

        Returns:
            Path to the saved file
        """
        cell_data = {"pressure": np.asarray(pressure, dtype=float),
                     "velocity": _pad3(np.asarray(velocity, dtype=float))}
        if eta_sq is not None:
            cell_data["eta_sq"] = np.asarray(eta_sq, dtype=float)
        if regions is not None:
            cell_data["region"] = np.asarray(regions, dtype=np.int32)
        if l_h is not None:
            cell_data["l_h"] = np.asarray(l_h, dtype=float)
        return self._write_vtk(
            self.solution_dir / f"sol_{iteration:04d}.vtk",
            mesh,
            {"nodal_pressure": np.asarray(nodal_pressure, dtype=float)},
            cell_data,
        )

    def write_report(self, iteration: int, columns: Dict[str, np.ndarray]) -> Path:
        """
        Write per-element estimator values as CSV.

        Args:
            iteration: Index used in the file name
            columns: Column name to (nt,) values, written in insertion order

        Returns:
            Path to the saved file
        """
        path = self.report_dir / f"report_{iteration:04d}.csv"
        names = list(columns)
        try:
            with open(path, 'w', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(names)
                for row in zip(*(columns[name] for name in names)):
                    writer.writerow([format_value(v) for v in row])
        except OSError as e:
            logger.error(f"Error writing report: {e}")
            raise
        logger.debug(f"Report written to {path}")
        return path

    def write_history(self, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
        """Rewrite history.csv with every row recorded so far."""
        try:
            with open(self.history_path, 'w', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([format_value(v) for v in row])
        except OSError as e:
            logger.error(f"Error writing history: {e}")
            raise
        return self.history_path

    def write_matrices(self, iteration: int, **matrices) -> Dict[str, Path]:
        """
        Dump sparse matrices in Matrix Market format.

        Args:
            iteration: Index used in the file names
            **matrices: Name to sparse matrix, e.g. A=..., B=..., S=...

        Returns:
            Name to written path
        """
        written = {}
        for name, matrix in matrices.items():
            path = self.report_dir / f"{name}_{iteration:04d}.mtx"
            scipy.io.mmwrite(str(path), matrix, precision=17)
            written[name] = path
        logger.debug(f"Matrices {', '.join(written)} written for iteration {iteration}")
        return written

    def write_mesh_text(self, mesh: Mesh, iteration: int) -> Path:
        """Write the mesh in the plain text format."""
        path = self.mesh_dir / f"mesh_{iteration:04d}.txt"
        path.write_text(format_mesh_text(mesh))
        return path

    def write_manifest(self, config: dict) -> Path:
        """
        Save the configuration echo together with library versions.

        Args:
            config: Configuration dictionary

        Returns:
            Path to the manifest
        """
        manifest = {
            'config': config,
            'versions': {
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__,
                'meshio': meshio.__version__,
            },
            'created': datetime.now().isoformat(),
        }
        try:
            with open(self.manifest_path, 'w', encoding='utf-8') as f:
                json.dump(manifest, f, indent=4, default=str)
            logger.info(f"Manifest saved to {self.manifest_path}")
        except OSError as e:
            logger.error(f"Error saving manifest: {e}")
            raise
        return self.manifest_path
