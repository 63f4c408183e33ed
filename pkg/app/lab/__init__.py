"""
Projection laboratory: subspace algebra, projection engines, rate constants,
constructions and certification
"""
