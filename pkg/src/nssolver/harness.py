"""placeholder"""
def taylor_green_exact(*a, **k): raise NotImplementedError
def compute_l2_errors(*a, **k): raise NotImplementedError
def run_convergence_study(*a, **k): raise NotImplementedError
def run_single(*a, **k): raise NotImplementedError
def write_vtk(*a, **k): raise NotImplementedError
def parse_config(*a, **k): raise NotImplementedError
class RunConfig: pass
class ErrorReport: pass
