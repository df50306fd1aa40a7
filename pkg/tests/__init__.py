# Test package for kwass
