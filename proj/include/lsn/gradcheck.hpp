#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lsn/optics.hpp"

namespace lsn {

// 16x16 grid, 8x8 sensor, five LEDs (three bright-field, two dark-field).
MicroscopeConfig micro_microscope();

struct GradcheckOptions {
  std::size_t instances = 20;        // imaging-gradient instances
  std::size_t chain_instances = 5;   // end-to-end instances through the CNN
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double chain_tolerance = 1e-3;
  // Multiplies every analytic gradient; anything but 1 should fail (test hook).
  double fault_scale = 1.0;
};

struct GradcheckGroup {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;  // checked in total
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t worst_instance = 0;
  std::size_t worst_coordinate = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;

  bool passed() const;
  // group,instances,coordinates,max_rel_error,tolerance,worst_instance,worst_coordinate,status
  std::string csv() const;
};

// Central differences against the analytic imaging gradients (led_weights,
// pupil) and against the full chain through the CNN (chain_led_weights,
// chain_pupil), on random micro instances.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace lsn
