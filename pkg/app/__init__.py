# SRPL open-set speaker identification backend
