"""Pure algorithms used by the data plane: hashing, CAM blocks, rules and tries."""
