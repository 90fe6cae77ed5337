# Make services a package
