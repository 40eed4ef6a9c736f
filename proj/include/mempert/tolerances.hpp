#pragma once
// Numerical tolerances shared by the oracles, the verify command and the
// test suites.

namespace mempert::tol {

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kFiniteDifferenceRelative = 1e-4;

inline constexpr double kRoundTrip = 1e-12;
inline constexpr double kConjugateRefit = 1e-10;
inline constexpr double kLinregRoutes = 1e-8;
inline constexpr double kInfluenceEquality = 1e-10;
inline constexpr double kStationaryGradient = 1e-8;
inline constexpr double kWeightedRefitDerivative = 1e-3;

inline constexpr double kConvexRetrain = 1e-10;
inline constexpr double kNonconvexRetrain = 1e-6;

inline constexpr double kKernelReduction = 1e-12;

inline constexpr double kMonteCarloSigmas = 3.0;

}  // namespace mempert::tol
