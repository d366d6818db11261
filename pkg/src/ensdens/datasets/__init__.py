"""Bundled example data."""

from importlib.resources import files

import numpy as np


def iris_paths():
    """Filesystem paths of the bundled iris feature and species CSVs."""
    base = files(__name__)
    return str(base / "iris.csv"), str(base / "iris_species.csv")


def load_iris():
    """The 150 x 4 iris measurements and their species labels."""
    data_path, species_path = iris_paths()
    x = np.loadtxt(data_path, delimiter=",", skiprows=1)
    species = np.loadtxt(species_path, dtype=str, skiprows=1)
    return x, species
