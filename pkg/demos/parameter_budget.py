"""
Where the parameters live
=========================

Counts per module for the desk preset used in tests and the wider "full"
preset, the latter set against a 3.8M reference count.
"""

from smat.bench import format_parameter_report, parameter_report

print(format_parameter_report(parameter_report(("tiny", "desk", "full"))))
