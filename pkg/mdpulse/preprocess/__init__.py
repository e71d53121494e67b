# Frame and target windowing
