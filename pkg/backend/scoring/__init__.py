# Scoring rules module
