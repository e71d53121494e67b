# Pulse waveforms and derivative operators
