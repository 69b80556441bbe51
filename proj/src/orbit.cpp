#include "orbitchain/orbit.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "orbitchain/common.hpp"

namespace orbitchain::orbit {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

}  // namespace

double SatelliteSpec::mean_motion() const {
  double a = semi_major_axis_km();
  return std::sqrt(kEarthMu / (a * a * a));
}

double SatelliteSpec::period_s() const { return 2.0 * std::numbers::pi / mean_motion(); }

void validate(const SatelliteSpec& sat) {
  if (!(sat.altitude_km > 0.0) || !std::isfinite(sat.altitude_km))
    fail(ErrorKind::config, "satellite '" + sat.sat_id + "': altitude_km must be > 0");
  if (!(sat.inclination_deg >= 0.0 && sat.inclination_deg <= 180.0))
    fail(ErrorKind::config, "satellite '" + sat.sat_id + "': inclination_deg must be in [0, 180]");
  if (!(sat.raan_deg >= 0.0 && sat.raan_deg < 360.0))
    fail(ErrorKind::config, "satellite '" + sat.sat_id + "': raan_deg must be in [0, 360)");
  if (!(sat.phase_deg >= 0.0 && sat.phase_deg < 360.0))
    fail(ErrorKind::config, "satellite '" + sat.sat_id + "': phase_deg must be in [0, 360)");
}

void validate(const ObserverSpec& obs) {
  if (!(std::abs(obs.latitude_deg) <= 90.0))
    fail(ErrorKind::config, "observer '" + obs.observer_id + "': |latitude_deg| must be <= 90");
  if (!(obs.longitude_deg >= -180.0 && obs.longitude_deg < 180.0))
    fail(ErrorKind::config, "observer '" + obs.observer_id + "': longitude_deg must be in [-180, 180)");
  if (!(obs.altitude_km >= 0.0))
    fail(ErrorKind::config, "observer '" + obs.observer_id + "': altitude_km must be >= 0");
}

std::vector<SatelliteSpec> generate_constellation(const std::string& vendor_id, int planes,
                                                  int sats_per_plane, double altitude_km,
                                                  double inclination_deg, double epoch_s) {
  if (planes < 1) fail(ErrorKind::config, "constellation planes must be >= 1");
  if (sats_per_plane < 1) fail(ErrorKind::config, "constellation sats_per_plane must be >= 1");
  std::vector<SatelliteSpec> out;
  out.reserve(static_cast<std::size_t>(planes) * sats_per_plane);
  for (int p = 0; p < planes; ++p) {
    for (int s = 0; s < sats_per_plane; ++s) {
      SatelliteSpec sat;
      sat.sat_id = vendor_id + "-p" + std::to_string(p) + "-s" + std::to_string(s);
      sat.vendor_id = vendor_id;
      sat.altitude_km = altitude_km;
      sat.inclination_deg = inclination_deg;
      sat.raan_deg = 360.0 * p / planes;
      sat.phase_deg = 360.0 * s / sats_per_plane;
      sat.epoch_s = epoch_s;
      validate(sat);
      out.push_back(std::move(sat));
    }
  }
  return out;
}

OrbitalState propagate(const SatelliteSpec& sat, double t_s) {
  const double a = sat.semi_major_axis_km();
  const double u = sat.phase_deg * kDeg + sat.mean_motion() * (t_s - sat.epoch_s);
  const double raan = sat.raan_deg * kDeg;
  const double inc = sat.inclination_deg * kDeg;
  const double cu = std::cos(u), su = std::sin(u);
  const double co = std::cos(raan), so = std::sin(raan);
  const double ci = std::cos(inc), si = std::sin(inc);
  OrbitalState st;
  st.time_s = t_s;
  st.position_eci_km = {a * (cu * co - su * ci * so), a * (cu * so + su * ci * co), a * (su * si)};
  return st;
}

Vec3 observer_ecef(const ObserverSpec& observer) {
  const double r = kEarthRadiusKm + observer.altitude_km;
  const double lat = observer.latitude_deg * kDeg;
  const double lon = observer.longitude_deg * kDeg;
  return {r * std::cos(lat) * std::cos(lon), r * std::cos(lat) * std::sin(lon), r * std::sin(lat)};
}

Vec3 eci_to_ecef(const Vec3& eci, double t_s) {
  // Earth-fixed frame coincides with the inertial frame at t = 0.
  const double theta = kEarthRotationRate * t_s;
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * eci[0] + s * eci[1], -s * eci[0] + c * eci[1], eci[2]};
}

double elevation_deg(const OrbitalState& state, const ObserverSpec& observer) {
  const Vec3 sat = eci_to_ecef(state.position_eci_km, state.time_s);
  const Vec3 obs = observer_ecef(observer);
  const Vec3 d{sat[0] - obs[0], sat[1] - obs[1], sat[2] - obs[2]};
  const double dn = norm(d);
  const double on = norm(obs);
  if (dn == 0.0) return 90.0;
  double s = dot(d, obs) / (dn * on);
  s = std::clamp(s, -1.0, 1.0);
  return std::asin(s) / kDeg;
}

namespace {

struct Sampler {
  const SatelliteSpec& sat;
  const ObserverSpec& obs;
  double theta;
  double margin(double t) const { return elevation_deg(propagate(sat, t), obs) - theta; }
};

// Returns the visible-side end of the bracket [lo, hi] whose endpoints lie on
// opposite sides of the mask.
double bisect(const Sampler& f, double lo, double hi, bool lo_visible) {
  while (hi - lo > kBoundaryToleranceS) {
    double mid = 0.5 * (lo + hi);
    bool vis = f.margin(mid) >= 0.0;
    if (vis == lo_visible)
      lo = mid;
    else
      hi = mid;
  }
  return lo_visible ? lo : hi;
}

// Golden-section search for the elevation maximum on [a, b].
double peak_time(const Sampler& f, double a, double b) {
  constexpr double kInvPhi = 0.6180339887498949;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f.margin(c), fd = f.margin(d);
  while (b - a > 0.01) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f.margin(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f.margin(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

std::vector<ContactWindow> compute_contact_windows(const SatelliteSpec& sat,
                                                   const ObserverSpec& observer, double t0_s,
                                                   double t1_s, double step_s,
                                                   double theta_min_deg, double bandwidth_bps) {
  if (!(t1_s > t0_s)) fail(ErrorKind::precondition, "contact windows need t1_s > t0_s");
  if (!(step_s > 0.0)) fail(ErrorKind::precondition, "contact windows need step_s > 0");
  const Sampler f{sat, observer, theta_min_deg};

  std::vector<double> times;
  for (std::int64_t i = 0;; ++i) {
    double t = t0_s + static_cast<double>(i) * step_s;
    if (t >= t1_s) {
      times.push_back(t1_s);
      break;
    }
    times.push_back(t);
  }
  std::vector<double> m(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) m[i] = f.margin(times[i]);

  std::vector<ContactWindow> out;
  auto emit = [&](double s, double e) {
    if (e <= s) return;
    out.push_back({sat.sat_id, observer.observer_id, s, e, e - s, bandwidth_bps});
  };

  bool open = m[0] >= 0.0;
  double start = t0_s;
  for (std::size_t i = 1; i < times.size(); ++i) {
    bool vis = m[i] >= 0.0;
    if (!open && vis) {
      start = bisect(f, times[i - 1], times[i], false);
      open = true;
    } else if (open && !vis) {
      emit(start, bisect(f, times[i - 1], times[i], true));
      open = false;
    } else if (!open && !vis && i + 1 < times.size() && m[i] >= m[i - 1] && m[i] >= m[i + 1] &&
               m[i] > -10.0) {
      // Possible pass entirely between samples.
      double tp = peak_time(f, times[i - 1], times[i + 1]);
      if (f.margin(tp) >= 0.0) {
        emit(bisect(f, times[i - 1], tp, false), bisect(f, tp, times[i + 1], true));
      }
    }
  }
  if (open) emit(start, t1_s);
  return out;
}

std::int64_t capacity_bytes(double bandwidth_bps, double duration_s) {
  if (!(bandwidth_bps > 0.0) || !(duration_s > 0.0)) return 0;
  return static_cast<std::int64_t>(std::floor(bandwidth_bps * duration_s / 8.0));
}

std::int64_t capacity_bytes(const ContactWindow& window) {
  return capacity_bytes(window.bandwidth_bps, window.duration_s);
}

std::string windows_csv(const std::vector<ContactWindow>& windows) {
  std::ostringstream os;
  os.precision(17);
  os << "sat_id,observer_id,t_start_s,t_end_s,duration_s,bandwidth_bps\n";
  for (const auto& w : windows)
    os << w.sat_id << ',' << w.observer_id << ',' << w.t_start_s << ',' << w.t_end_s << ','
       << w.duration_s << ',' << w.bandwidth_bps << '\n';
  return os.str();
}

}  // namespace orbitchain::orbit
