#pragma once

// ScanImage on disk. Two formats, both lossless:
//
//   binary: one JSON header line terminated by '\n', followed by
//           width*height little-endian IEEE-754 doubles, row-major.
//   csv:    "# " + the same JSON header on the first line, then one line per
//           image row with comma-separated values in shortest round-trip form.

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include <json.hpp>

#include "ionimp/core.hpp"

namespace ionimp {

class FormatError : public Error {
public:
    using Error::Error;
};

namespace io_detail {

inline nlohmann::json header_of(const ScanImage& img) {
    return {{"format", "ionimp-scan"},
            {"version", 1},
            {"width", img.width()},
            {"height", img.height()},
            {"pixel_size_nm", img.pixel_size()},
            {"dwell_s", img.dwell()},
            {"origin_nm", {img.origin().x, img.origin().y}},
            {"dtype", "float64-le"}};
}

inline ScanImage image_from_header(const std::string& line) {
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scan header is not valid JSON: ") + e.what());
    }
    try {
        if (h.at("format").get<std::string>() != "ionimp-scan") throw FormatError("not an ionimp scan");
        const auto& o = h.at("origin_nm");
        return ScanImage(h.at("width").get<std::size_t>(), h.at("height").get<std::size_t>(),
                         h.at("pixel_size_nm").get<double>(), h.at("dwell_s").get<double>(),
                         Vec2{o.at(0).get<double>(), o.at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("scan header missing field: ") + e.what());
    }
}

inline void append_double(std::string& out, double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, r.ptr);
}

}  // namespace io_detail

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
    std::string s;
    io_detail::append_double(s, v);
    return s;
}

inline double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
        throw FormatError("not a number: '" + std::string(s) + "'");
    }
    return v;
}

inline void write_scan_binary(std::ostream& os, const ScanImage& img) {
    static_assert(std::endian::native == std::endian::little, "binary scan I/O assumes little-endian");
    os << io_detail::header_of(img).dump() << '\n';
    os.write(reinterpret_cast<const char*>(img.data().data()),
             static_cast<std::streamsize>(img.data().size() * sizeof(double)));
    if (!os) throw Error("write_scan_binary: stream failure");
}

inline ScanImage read_scan_binary(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty scan stream");
    ScanImage img = io_detail::image_from_header(line);
    auto& d = img.data();
    is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != d.size() * sizeof(double)) {
        throw FormatError("truncated scan raster");
    }
    return img;
}

inline void write_scan_csv(std::ostream& os, const ScanImage& img) {
    os << "# " << io_detail::header_of(img).dump() << '\n';
    std::string row;
    for (std::size_t i = 0; i < img.height(); ++i) {
        row.clear();
        for (std::size_t j = 0; j < img.width(); ++j) {
            if (j) row.push_back(',');
            io_detail::append_double(row, img.at(i, j));
        }
        os << row << '\n';
    }
}

inline ScanImage read_scan_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw FormatError("csv scan lacks '# ' header");
    ScanImage img = io_detail::image_from_header(line.substr(2));
    for (std::size_t i = 0; i < img.height(); ++i) {
        if (!std::getline(is, line)) throw FormatError("csv scan: missing rows");
        std::string_view rest(line);
        for (std::size_t j = 0; j < img.width(); ++j) {
            const auto comma = rest.find(',');
            const bool last = j + 1 == img.width();
            if (last != (comma == std::string_view::npos)) throw FormatError("csv scan: wrong column count");
            img.at(i, j) = parse_double(rest.substr(0, comma));
            if (!last) rest.remove_prefix(comma + 1);
        }
    }
    return img;
}

enum class ScanFormat { binary, csv };

/// Files ending in ".csv" use the CSV raster; anything else is binary.
inline ScanFormat format_for_path(const std::string& path) {
    return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? ScanFormat::csv
                                                                             : ScanFormat::binary;
}

inline void save_scan(const std::string& path, const ScanImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    if (format_for_path(path) == ScanFormat::csv) write_scan_csv(f, img);
    else write_scan_binary(f, img);
}

inline ScanImage load_scan(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for reading: " + path);
    return format_for_path(path) == ScanFormat::csv ? read_scan_csv(f) : read_scan_binary(f);
}

}  // namespace ionimp
