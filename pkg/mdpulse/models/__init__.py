# Attention and plain multi-branch networks
