from .asm import AsmError, AsmProgram, assemble, disassemble
from .catalog import NAMES, SUITE, corpus, golden, load, source

__all__ = ["AsmError", "AsmProgram", "assemble", "disassemble",
           "NAMES", "SUITE", "corpus", "golden", "load", "source"]
