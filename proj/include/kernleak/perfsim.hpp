#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kernleak/schedule.hpp"

// Analytical hardware model: turns a compiled kernel sequence into
// deterministic per-kernel metrics (latency, L2 reads/writes). Latency
// follows a roofline: launch overhead plus the larger of compute time
// and memory time, scaled by the knob efficiency factor. Observation
// noise is multiplicative lognormal from a counter-based keyed stream,
// so traces are reproducible regardless of evaluation order.

namespace kernleak {

struct DeviceProfile {
    std::string name;
    double peak_flops = 0;         // flop/s
    double mem_bandwidth = 0;      // bytes/s
    int64_t launch_overhead_ns = 0;
    int64_t l2_capacity_bytes = 0;
};

// Shipped default profile, scaled after a 40 GB datacenter accelerator.
DeviceProfile a100_like_profile();

DeviceProfile load_device_profile(std::string_view bytes);
std::string save_device_profile(const DeviceProfile& d);

struct KernelRecord {
    int64_t index = 0;
    std::string kernel_name;
    int64_t duration_ns = 0;  // >= launch overhead
    int64_t l2_read_bytes = 0;
    int64_t l2_write_bytes = 0;
    int64_t input_bytes = 0;
    int64_t output_bytes = 0;

    bool operator==(const KernelRecord&) const = default;
};

struct Trace {
    std::string model_name;
    std::string device_name;
    double noise_sigma = 0;
    uint64_t seed = 0;
    std::vector<KernelRecord> records;  // indices contiguous from 0

    bool operator==(const Trace&) const = default;
};

// Metric channels, in noise-stream key order.
enum Metric : uint32_t {
    kMetricDuration = 0,
    kMetricReads = 1,
    kMetricWrites = 2,
    kMetricInput = 3,
    kMetricOutput = 4,
};
inline constexpr int kMetricCount = 5;

// Noise-free real-valued metrics for one kernel. Reads double when the
// kernel footprint (input + output bytes) exceeds the L2 capacity.
std::array<double, kMetricCount> simulate_kernel_real(const Kernel& k,
                                                      const DeviceProfile& d);

// Noise-free record: the real metrics floored to integers, duration
// clamped to at least the launch overhead.
KernelRecord simulate_kernel(const Kernel& k, const DeviceProfile& d,
                             int64_t index = 0);

// Per kernel and metric: value = noise-free * exp(sigma * z), with z a
// standard normal keyed by (seed, kernel index, metric). sigma = 0
// reproduces simulate_kernel exactly.
Trace run_inference(const CompiledModel& compiled, const DeviceProfile& d,
                    double noise_sigma, uint64_t seed);

int64_t total_latency_ns(const Trace& t);

} // namespace kernleak
