# Multi-derivative pulse measurement stack
