# Make config a package
