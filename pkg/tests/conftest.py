import pytest

from crackfind import fem, geometry, ndmap
from crackfind.geometry import PixelGrid, PixelSet, build_rect_mesh, embed_crack


@pytest.fixture(scope="session")
def chain_setup():
    """Unit square with one insulating and one conducting crack, each
    compactly inside its own pixel strip."""
    mesh = build_rect_mesh(1.0, 1.0, 1.0 / 16)
    mesh, cracks = embed_crack(
        mesh, [(0.25, 0.3125), (0.5, 0.3125)], geometry.INSULATING
    )
    mesh, cracks = embed_crack(
        mesh, [(0.5, 0.6875), (0.75, 0.6875)], geometry.CONDUCTING, cracks=cracks
    )
    grid = PixelGrid(mesh, 8, 8)
    V = PixelSet.from_rect(grid, 1, 2, 4, 2)
    W = PixelSet.from_rect(grid, 3, 5, 6, 5)
    gamma0 = fem.Conductivity(mesh, 1.0)
    basis = ndmap.build_basis(mesh, 24)
    return mesh, cracks, grid, V, W, gamma0, basis
