"""Positive solutions of the singular fractional problem (-Delta)^s u = lambda f(u) / u^q on (-1, 1)"""
