#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace pinnsim {

/// Shortest text that round-trips a double at 17 significant digits.
inline std::string format_double(double value)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

/// Minimal CSV row writer. Fields are written verbatim; callers pass plain
/// identifiers or numbers.
class CsvWriter {
  public:
    explicit CsvWriter(std::ostream& out) : out_(out) {}

    CsvWriter& field(std::string_view text)
    {
        if (!first_) {
            out_ << ',';
        }
        out_ << text;
        first_ = false;
        return *this;
    }
    CsvWriter& field(double value) { return field(format_double(value)); }
    CsvWriter& field(int value) { return field(std::to_string(value)); }
    CsvWriter& field(long value) { return field(std::to_string(value)); }
    CsvWriter& field(std::size_t value) { return field(std::to_string(value)); }

    void end_row()
    {
        out_ << '\n';
        first_ = true;
    }

    void header(const std::vector<std::string>& names)
    {
        for (const auto& n : names) {
            field(n);
        }
        end_row();
    }

  private:
    std::ostream& out_;
    bool first_ = true;
};

}  // namespace pinnsim
