#include "chiarella/trajectory.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace chiarella {

namespace {

void append_double(std::string& out, double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    out += buf;
}

}  // namespace

std::vector<double> Trajectory::mispricing() const {
    std::vector<double> d(size());
    for (std::size_t i = 0; i < size(); ++i) d[i] = p[i] - v[i];
    return d;
}

void Trajectory::write_csv(std::ostream& os) const {
    os << "t,p,v,m,delta\n";
    std::string line;
    for (std::size_t i = 0; i < size(); ++i) {
        line.clear();
        append_double(line, times[i]);
        line += ',';
        append_double(line, p[i]);
        line += ',';
        append_double(line, v[i]);
        line += ',';
        append_double(line, m[i]);
        line += ',';
        append_double(line, p[i] - v[i]);
        line += '\n';
        os << line;
    }
}

void Trajectory::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_csv(os);
}

}  // namespace chiarella
