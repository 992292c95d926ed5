# ensures the tests directory is importable for the shared helpers module
