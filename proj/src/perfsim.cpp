#include "kernleak/perfsim.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "kernleak/rng.hpp"

namespace kernleak {

using nlohmann::json;

DeviceProfile a100_like_profile() {
    DeviceProfile d;
    d.name = "a100-like";
    d.peak_flops = 19.5e12;       // fp32
    d.mem_bandwidth = 1.555e12;   // HBM-class
    d.launch_overhead_ns = 2000;
    d.l2_capacity_bytes = 40LL * 1024 * 1024;
    return d;
}

DeviceProfile load_device_profile(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad device profile: ") + e.what());
    }
    DeviceProfile d;
    try {
        d.name = doc.at("name").get<std::string>();
        d.peak_flops = doc.at("peak_flops").get<double>();
        d.mem_bandwidth = doc.at("mem_bandwidth").get<double>();
        d.launch_overhead_ns = doc.at("launch_overhead_ns").get<int64_t>();
        d.l2_capacity_bytes = doc.at("l2_capacity_bytes").get<int64_t>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad device profile field: ") + e.what());
    }
    if (d.peak_flops <= 0 || d.mem_bandwidth <= 0 || d.launch_overhead_ns <= 0 ||
        d.l2_capacity_bytes <= 0)
        throw ValidationError("device profile fields must be strictly positive");
    return d;
}

std::string save_device_profile(const DeviceProfile& d) {
    json doc;
    doc["name"] = d.name;
    doc["peak_flops"] = d.peak_flops;
    doc["mem_bandwidth"] = d.mem_bandwidth;
    doc["launch_overhead_ns"] = d.launch_overhead_ns;
    doc["l2_capacity_bytes"] = d.l2_capacity_bytes;
    return doc.dump(2) + "\n";
}

std::array<double, kMetricCount> simulate_kernel_real(const Kernel& k,
                                                      const DeviceProfile& d) {
    double reads = static_cast<double>(k.actual_read_bytes);
    // Working set spilling past L2 rereads everything once more.
    if (k.input_bytes + k.output_bytes > d.l2_capacity_bytes) reads *= 2.0;
    double writes = static_cast<double>(k.write_bytes);

    double compute_ns = static_cast<double>(k.flops) / d.peak_flops * 1e9;
    double memory_ns = (reads + writes) / d.mem_bandwidth * 1e9;
    double duration = static_cast<double>(d.launch_overhead_ns) +
                      std::max(compute_ns, memory_ns) * k.time_efficiency;

    return {duration, reads, writes, static_cast<double>(k.input_bytes),
            static_cast<double>(k.output_bytes)};
}

namespace {

KernelRecord to_record(const std::array<double, kMetricCount>& m,
                       const std::string& name, int64_t index,
                       const DeviceProfile& d) {
    KernelRecord r;
    r.index = index;
    r.kernel_name = name;
    r.duration_ns = std::max(d.launch_overhead_ns,
                             static_cast<int64_t>(std::floor(m[kMetricDuration])));
    r.l2_read_bytes = static_cast<int64_t>(std::floor(m[kMetricReads]));
    r.l2_write_bytes = static_cast<int64_t>(std::floor(m[kMetricWrites]));
    r.input_bytes = static_cast<int64_t>(std::floor(m[kMetricInput]));
    r.output_bytes = static_cast<int64_t>(std::floor(m[kMetricOutput]));
    return r;
}

} // namespace

KernelRecord simulate_kernel(const Kernel& k, const DeviceProfile& d, int64_t index) {
    return to_record(simulate_kernel_real(k, d), k.name, index, d);
}

Trace run_inference(const CompiledModel& compiled, const DeviceProfile& d,
                    double noise_sigma, uint64_t seed) {
    if (noise_sigma < 0) throw ValidationError("noise_sigma must be >= 0");
    Trace t;
    t.model_name = compiled.graph_name;
    t.device_name = d.name;
    t.noise_sigma = noise_sigma;
    t.seed = seed;
    t.records.reserve(compiled.kernels.size());
    for (size_t i = 0; i < compiled.kernels.size(); ++i) {
        auto m = simulate_kernel_real(compiled.kernels[i], d);
        if (noise_sigma > 0)
            for (uint32_t c = 0; c < kMetricCount; ++c)
                m[c] *= std::exp(noise_sigma * keyed_normal(seed, i, c));
        t.records.push_back(to_record(m, compiled.kernels[i].name,
                                      static_cast<int64_t>(i), d));
    }
    return t;
}

int64_t total_latency_ns(const Trace& t) {
    int64_t total = 0;
    for (const auto& r : t.records) total += r.duration_ns;
    return total;
}

} // namespace kernleak
