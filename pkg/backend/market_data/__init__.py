# Market data ingestion and feature construction module
