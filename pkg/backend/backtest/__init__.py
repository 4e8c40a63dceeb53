# Backtesting module
