# API module