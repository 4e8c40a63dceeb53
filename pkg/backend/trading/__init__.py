# Trading strategies module
