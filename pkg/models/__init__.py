# Run configuration, conversation records, analysis types and the run registry
