#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace dwtnet {

// RFC 4180 writer: CRLF line endings, mandatory header row, quoting only
// when a field needs it. Numbers print with %.12g so reruns are byte-stable.
class CsvWriter {
   public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) {
        os_.open(path, std::ios::binary | std::ios::trunc);
        if (!os_) throw IoError("cannot open CSV for writing: " + path);
        row(header);
    }

    void row(const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) os_ << ',';
            os_ << escape(fields[i]);
        }
        os_ << "\r\n";
    }

    static std::string num(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        return buf;
    }
    static std::string num(long v) { return std::to_string(v); }
    static std::string num(int v) { return std::to_string(v); }

   private:
    static std::string escape(const std::string& f) {
        if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
        std::string out = "\"";
        for (char c : f) {
            if (c == '"') out += '"';
            out += c;
        }
        out += '"';
        return out;
    }

    std::ofstream os_;
};

}  // namespace dwtnet
