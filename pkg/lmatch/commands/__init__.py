# Make commands a package
