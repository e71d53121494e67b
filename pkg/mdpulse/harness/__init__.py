# Command-line orchestration
