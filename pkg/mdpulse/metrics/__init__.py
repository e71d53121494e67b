# Heart rate, LVET and agreement statistics
