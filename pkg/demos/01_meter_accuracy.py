# coding: utf-8

# # Meter accuracy classes and the reference-meter noise
#
# A class-c energy meter behind a class-k current transformer has a combined
# worst-case error of sqrt(p_meter^2 + p_CT^2).  Dividing by the coverage
# factor z = 1.96 turns the bound into the standard deviation of the
# reference meter used for calibration.

import numpy as np

from simexcal import MeterClassSpec, combined_error_bound, meter_error_bound, sigma_u

spec = MeterClassSpec()  # Class 3 meter, Class 5 CT, P_n = 200 kW
for name, s in [("Class 3 + CT 5", spec), ("Class 2 + CT 5", MeterClassSpec.iec(2, 5)),
                ("Class 3 + CT 3", MeterClassSpec.iec(3, 3))]:
    print(f"{name}: {100 * combined_error_bound(100.0, 1.0, s) / s.rated_power:.2f}% of P_n")


# The meter bound depends on the current band and the power factor, so the
# noise is heteroscedastic.

power = np.array([5.0, 15.0, 50.0, 150.0])
for pf in (1.0, 0.5):
    print(f"pf {pf}: meter bound {meter_error_bound(power, pf, spec)} kW, sigma_u {np.round(sigma_u(power, pf, spec), 3)} kW")
