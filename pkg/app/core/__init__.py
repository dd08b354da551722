# Core: exceptions, status vocabularies, run configuration
