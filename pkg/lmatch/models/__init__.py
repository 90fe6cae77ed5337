# Make models a package
