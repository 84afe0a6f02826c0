#pragma once

// Unit system: lengths in Angstrom, energies in eV, time in fs, masses in amu.
namespace alloop::units {

inline constexpr double kBoltzmann = 8.617333262e-5;  // eV/K
// amu/A^3 -> g/cm^3
inline constexpr double kAmuPerA3ToGPerCm3 = 1.66053906660;
// amu * A^2 / fs^2 -> eV
inline constexpr double kAmuA2PerFs2ToEv = 1.66053906660e-27 * 1.0e10 / 1.602176634e-19;
// eV/A^3 -> bar
inline constexpr double kEvPerA3ToBar = 1.602176634e6;
// A^2/fs -> cm^2/s
inline constexpr double kA2PerFsToCm2PerS = 0.1;

}  // namespace alloop::units
