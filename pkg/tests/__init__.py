# Make tests directory a package
