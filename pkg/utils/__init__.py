# Shared helpers for the simulation services
