# Prediction bands module
