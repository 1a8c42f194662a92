# Simulation services: pneumatics, arm, flight, mission and reporting
