#pragma once

// Minimal CSV emission with full double precision (%.17g), so reruns with the
// same seeds produce byte-identical files.

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mfnn::csv {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Writer {
public:
    Writer(const std::string& path, std::initializer_list<std::string_view> header)
        : Writer(path, std::vector<std::string>(header.begin(), header.end())) {}

    Writer(const std::string& path, const std::vector<std::string>& header) : os_(path) {
        if (!os_) throw std::runtime_error("cannot open " + path + " for writing");
        for (std::size_t k = 0; k < header.size(); ++k) os_ << (k ? "," : "") << header[k];
        os_ << '\n';
        n_cols_ = header.size();
    }

    Writer& cell(double v) { return raw(format_double(v)); }
    Writer& cell(std::size_t v) { return raw(std::to_string(v)); }
    Writer& cell(int v) { return raw(std::to_string(v)); }
    Writer& cell(std::string_view s) { return raw(s); }

    void end_row() {
        if (col_ != n_cols_) throw std::logic_error("csv: row has wrong number of cells");
        os_ << '\n';
        col_ = 0;
    }

    template <class... Ts>
    void row(const Ts&... values) {
        (cell(values), ...);
        end_row();
    }

    void close() {
        os_.close();
        if (os_.fail()) throw std::runtime_error("csv: write failed");
    }

private:
    Writer& raw(std::string_view s) {
        if (col_ > 0) os_ << ',';
        os_ << s;
        ++col_;
        return *this;
    }

    std::ofstream os_;
    std::size_t n_cols_ = 0;
    std::size_t col_ = 0;
};

}  // namespace mfnn::csv
