# mdpulse test suite
