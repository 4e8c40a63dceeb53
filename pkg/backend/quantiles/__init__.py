# Marginal quantile regression module
