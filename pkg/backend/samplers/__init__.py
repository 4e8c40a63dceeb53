# Path sampling module
