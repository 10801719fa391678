#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kernleak/perfsim.hpp"

// Trace interchange (profiler-style CSV) and the attacker-visible
// projection. The AttackerView type has no field that could hold an op
// label or kernel name, so identity cannot leak through it structurally.

namespace kernleak {

inline constexpr const char* kTraceCsvHeader =
    "index,kernel_name,duration_ns,l2_read_bytes,l2_write_bytes,input_bytes,output_bytes";

struct ViewRecord {
    int64_t index = 0;
    int64_t duration_ns = 0;
    int64_t l2_read_bytes = 0;
    int64_t l2_write_bytes = 0;
    int64_t input_bytes = 0;
    int64_t output_bytes = 0;

    bool operator==(const ViewRecord&) const = default;
};

struct AttackerView {
    std::string device_name;
    std::vector<ViewRecord> records;
};

// One `#`-prefixed metadata line, the fixed header, then one decimal row
// per record, LF line endings. Byte-exact for a given trace.
std::string export_trace_csv(const Trace& t);

// Inverse of export on its image. Rejects missing/extra columns,
// non-integer or negative fields, and non-contiguous indices, naming
// the offending line. The metadata line is optional on foreign inputs.
Trace parse_trace_csv(std::string_view bytes);

// Drop kernel names entirely; keep order and all numeric metrics.
AttackerView attacker_view(const Trace& t);

} // namespace kernleak
