import pytest

from sunif.optics import IlluminationModel


@pytest.fixture
def illum():
    return IlluminationModel.from_wavelength(0.55, 0.1)
