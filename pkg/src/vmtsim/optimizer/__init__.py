"""Runtime allocation optimizer: CFG model, USL capacity, solvers and reallocation."""
