"""Training, evaluation, reporting and persistence built on the core library."""
