"""symchain: determining systems for PDE symmetries and Ritt-Wu chain machinery.

Subpackages:
    expr     exact differential-polynomial expression kernel
    diffalg  ranks, chains, certified pseudo-reduction, Wu's algorithm
    symgen   classical / nonclassical determining system generation
    bridge   the classical<->nonclassical connection (CLN1 map, chain C,
             identity certificates, nontriviality test)
    harness  corpus of worked case studies and membership checking
    grammar  text grammar for problems, candidates and systems
    cli      command line front-end
"""

__version__ = "0.1.0"
