"""Deep-RL multicast routing laboratory over a simulated SDN data plane."""
