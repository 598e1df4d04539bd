"""
Numpy layers with hand-written backward passes and the three cascade networks.
"""
