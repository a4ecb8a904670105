"""RISC-V core emulator with packed-SIMD dot products and MAC&LOAD."""

from .core import CoreState, StepResult, Trace, memory_accesses, run, sdotp, step, to_signed
from .instructions import Instruction, MemOperand, Program, ProgramBuilder, assemble, format_program

__all__ = [
    "CoreState",
    "Instruction",
    "MemOperand",
    "Program",
    "ProgramBuilder",
    "StepResult",
    "Trace",
    "assemble",
    "format_program",
    "memory_accesses",
    "run",
    "sdotp",
    "step",
    "to_signed",
]
