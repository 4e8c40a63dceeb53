# LEAR point forecasting module
