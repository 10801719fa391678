#include "kernleak/sidechannel.hpp"

#include <charconv>

#include "json.hpp"

namespace kernleak {

using nlohmann::json;

std::string export_trace_csv(const Trace& t) {
    json meta;
    meta["device"] = t.device_name;
    meta["model"] = t.model_name;
    meta["noise_sigma"] = t.noise_sigma;
    meta["seed"] = t.seed;

    std::string out = "# " + meta.dump() + "\n";
    out += kTraceCsvHeader;
    out += '\n';
    for (const auto& r : t.records) {
        out += std::to_string(r.index);
        out += ',';
        out += r.kernel_name;
        out += ',';
        out += std::to_string(r.duration_ns);
        out += ',';
        out += std::to_string(r.l2_read_bytes);
        out += ',';
        out += std::to_string(r.l2_write_bytes);
        out += ',';
        out += std::to_string(r.input_bytes);
        out += ',';
        out += std::to_string(r.output_bytes);
        out += '\n';
    }
    return out;
}

namespace {

[[noreturn]] void line_error(size_t line_no, const std::string& what) {
    throw ParseError("trace csv line " + std::to_string(line_no) + ": " + what);
}

int64_t parse_int(std::string_view field, size_t line_no, const char* col) {
    int64_t value = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        line_error(line_no, std::string("non-integer ") + col + " field '" +
                                std::string(field) + "'");
    if (value < 0)
        line_error(line_no, std::string("negative ") + col + " field");
    return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

} // namespace

Trace parse_trace_csv(std::string_view bytes) {
    Trace t;
    size_t line_no = 0;
    size_t pos = 0;
    bool header_seen = false;

    while (pos <= bytes.size()) {
        size_t end = bytes.find('\n', pos);
        std::string_view line = (end == std::string_view::npos)
                                    ? bytes.substr(pos)
                                    : bytes.substr(pos, end - pos);
        pos = (end == std::string_view::npos) ? bytes.size() + 1 : end + 1;
        ++line_no;
        if (line.empty()) continue;

        if (line[0] == '#') {
            if (header_seen) line_error(line_no, "metadata after header");
            std::string_view body = line.substr(1);
            while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
            try {
                json meta = json::parse(body);
                t.device_name = meta.value("device", std::string());
                t.model_name = meta.value("model", std::string());
                t.noise_sigma = meta.value("noise_sigma", 0.0);
                t.seed = meta.value("seed", uint64_t{0});
            } catch (const json::exception& e) {
                line_error(line_no, std::string("bad metadata: ") + e.what());
            }
            continue;
        }
        if (!header_seen) {
            if (line != kTraceCsvHeader)
                line_error(line_no, "expected header '" + std::string(kTraceCsvHeader) + "'");
            header_seen = true;
            continue;
        }

        auto fields = split(line, ',');
        if (fields.size() != 7)
            line_error(line_no, "expected 7 columns, found " + std::to_string(fields.size()));
        KernelRecord r;
        r.index = parse_int(fields[0], line_no, "index");
        r.kernel_name = std::string(fields[1]);
        r.duration_ns = parse_int(fields[2], line_no, "duration_ns");
        r.l2_read_bytes = parse_int(fields[3], line_no, "l2_read_bytes");
        r.l2_write_bytes = parse_int(fields[4], line_no, "l2_write_bytes");
        r.input_bytes = parse_int(fields[5], line_no, "input_bytes");
        r.output_bytes = parse_int(fields[6], line_no, "output_bytes");
        if (r.index != static_cast<int64_t>(t.records.size()))
            line_error(line_no, "non-contiguous index " + std::to_string(r.index) +
                                    " (expected " + std::to_string(t.records.size()) + ")");
        t.records.push_back(std::move(r));
    }
    if (!header_seen) throw ParseError("trace csv: missing header line");
    return t;
}

AttackerView attacker_view(const Trace& t) {
    AttackerView v;
    v.device_name = t.device_name;
    v.records.reserve(t.records.size());
    for (const auto& r : t.records)
        v.records.push_back({r.index, r.duration_ns, r.l2_read_bytes, r.l2_write_bytes,
                             r.input_bytes, r.output_bytes});
    return v;
}

} // namespace kernleak
