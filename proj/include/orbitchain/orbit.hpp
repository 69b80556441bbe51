#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace orbitchain::orbit {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kEarthMu = 398600.4418;            // km^3/s^2
inline constexpr double kEarthRotationRate = 7.2921159e-5;  // rad/s
inline constexpr double kDefaultStepS = 10.0;
inline constexpr double kBoundaryToleranceS = 0.1;

using Vec3 = std::array<double, 3>;

struct SatelliteSpec {
  std::string sat_id;
  std::string vendor_id;
  double altitude_km = 550.0;
  double inclination_deg = 53.0;
  double raan_deg = 0.0;
  double phase_deg = 0.0;
  double epoch_s = 0.0;

  double semi_major_axis_km() const { return kEarthRadiusKm + altitude_km; }
  double mean_motion() const;  // rad/s
  double period_s() const;
};

enum class ObserverKind { HAP, GS };

struct ObserverSpec {
  std::string observer_id;
  ObserverKind kind = ObserverKind::HAP;
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;
  double altitude_km = 20.0;
};

struct OrbitalState {
  Vec3 position_eci_km{};
  double time_s = 0.0;
};

struct ContactWindow {
  std::string sat_id;
  std::string observer_id;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
  double duration_s = 0.0;
  double bandwidth_bps = 0.0;
};

void validate(const SatelliteSpec& sat);
void validate(const ObserverSpec& obs);

/// planes x sats_per_plane satellites; plane p at RAAN 360p/planes, slot s
/// at in-plane phase 360s/sats_per_plane.
std::vector<SatelliteSpec> generate_constellation(const std::string& vendor_id, int planes,
                                                  int sats_per_plane, double altitude_km,
                                                  double inclination_deg, double epoch_s = 0.0);

/// Circular two-body propagation; the orbit starts at the ascending node
/// advanced by `phase_deg` at `epoch_s`.
OrbitalState propagate(const SatelliteSpec& sat, double t_s);

/// Earth-fixed position of the observer over the spherical Earth.
Vec3 observer_ecef(const ObserverSpec& observer);
Vec3 eci_to_ecef(const Vec3& eci, double t_s);

/// Geometric elevation above the observer's local horizon, degrees.
double elevation_deg(const OrbitalState& state, const ObserverSpec& observer);

/// Maximal intervals in [t0, t1] with elevation >= theta_min. Coarse sampling
/// at `step_s`, boundaries bisected to 0.1 s and reported on the visible side.
/// Sampled local maxima just under the mask are refined so short grazing
/// passes are not lost between samples.
std::vector<ContactWindow> compute_contact_windows(const SatelliteSpec& sat,
                                                   const ObserverSpec& observer, double t0_s,
                                                   double t1_s, double step_s,
                                                   double theta_min_deg, double bandwidth_bps);

std::int64_t capacity_bytes(const ContactWindow& window);
std::int64_t capacity_bytes(double bandwidth_bps, double duration_s);

std::string windows_csv(const std::vector<ContactWindow>& windows);

}  // namespace orbitchain::orbit
