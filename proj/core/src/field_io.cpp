#include "heatsim/field_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace heatsim {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'F', 'L', 'D', '0', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "field container I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
        std::size_t b = 0;
        while (b < cur.size() && cur[b] == ' ') ++b;
        out.push_back(cur.substr(b));
    }
    return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open CSV: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line == "\r") continue;
        rows.push_back(split_csv_line(line));
    }
    if (rows.empty()) throw std::runtime_error("empty CSV: " + path);
    return rows;
}

} // namespace

void write_field(const std::string& path, const AnomalyField& field, const GridDomain& domain) {
    field.validate();
    if (domain.n() != field.n) throw std::invalid_argument("write_field: domain/field cell count mismatch");
    nlohmann::json h;
    h["n"] = field.n;
    h["D"] = field.D;
    h["T"] = field.T;
    h["p"] = field.p;
    h["scenario"] = to_string(field.scenario);
    h["provenance"] = field.provenance;
    auto& cells = h["cells"] = nlohmann::json::array();
    for (int i = 0; i < field.n; ++i)
        cells.push_back({{"lon", domain.lon[i]}, {"lat", domain.lat[i]}, {"area_km2", domain.area_km2[i]}});
    auto& cov = h["covariates"] = nlohmann::json::array();
    for (int t = 0; t < field.T; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < field.p; ++j) row.push_back(field.cov(t)[j]);
        cov.push_back(row);
    }
    const std::string hs = h.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(kMagic, 8);
    write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    os.write(reinterpret_cast<const char*>(field.values.data()),
             static_cast<std::streamsize>(field.values.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::pair<AnomalyField, GridDomain> read_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open field: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("bad field magic in " + path);
    const std::uint64_t hlen = read_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("truncated field header in " + path);
    const nlohmann::json h = nlohmann::json::parse(hs);

    AnomalyField f;
    f.n = h.at("n").get<int>();
    f.D = h.at("D").get<int>();
    f.T = h.at("T").get<int>();
    f.p = h.at("p").get<int>();
    f.scenario = scenario_from_string(h.at("scenario").get<std::string>());
    f.provenance = h.value("provenance", std::vector<std::string>{});
    f.covariates.reserve(static_cast<std::size_t>(f.T) * f.p);
    for (const auto& row : h.at("covariates"))
        for (const auto& v : row) f.covariates.push_back(v.get<double>());

    std::vector<double> lon, lat, area;
    for (const auto& c : h.at("cells")) {
        lon.push_back(c.at("lon").get<double>());
        lat.push_back(c.at("lat").get<double>());
        area.push_back(c.at("area_km2").get<double>());
    }
    GridDomain dom = project_to_km(lon, lat, area);

    f.values.resize(static_cast<std::size_t>(f.n) * f.D * f.T);
    is.read(reinterpret_cast<char*>(f.values.data()),
            static_cast<std::streamsize>(f.values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated field payload in " + path);
    f.validate();
    return {std::move(f), std::move(dom)};
}

std::pair<AnomalyField, GridDomain> field_from_csv(const std::string& values_csv,
                                                   const std::string& cells_csv,
                                                   Scenario scenario,
                                                   const std::string& covariates_csv) {
    const auto cells = read_csv(cells_csv);
    if (cells[0].size() < 3 || cells[0][0] != "cell_id")
        throw std::runtime_error("cells CSV needs header cell_id,lon,lat[,area_km2]");
    std::map<long, int> cell_index;
    std::vector<double> lon, lat, area;
    const bool has_area = cells[0].size() >= 4;
    for (std::size_t i = 1; i < cells.size(); ++i) {
        cell_index[std::stol(cells[i][0])] = static_cast<int>(i - 1);
        lon.push_back(std::stod(cells[i][1]));
        lat.push_back(std::stod(cells[i][2]));
        if (has_area) area.push_back(std::stod(cells[i][3]));
    }
    GridDomain dom = project_to_km(lon, lat, area);

    const auto vals = read_csv(values_csv);
    if (vals[0].size() < 4 || vals[0][0] != "cell_id")
        throw std::runtime_error("values CSV needs header cell_id,day,year,value");
    int D = 0, T = 0;
    for (std::size_t i = 1; i < vals.size(); ++i) {
        D = std::max(D, static_cast<int>(std::stol(vals[i][1])));
        T = std::max(T, static_cast<int>(std::stol(vals[i][2])));
    }
    AnomalyField f;
    f.n = dom.n();
    f.D = D;
    f.T = T;
    f.scenario = scenario;
    f.values.assign(static_cast<std::size_t>(f.n) * D * T,
                    std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 1; i < vals.size(); ++i) {
        const auto it = cell_index.find(std::stol(vals[i][0]));
        if (it == cell_index.end()) throw std::runtime_error("values CSV references unknown cell_id");
        const int d = static_cast<int>(std::stol(vals[i][1])) - 1;
        const int t = static_cast<int>(std::stol(vals[i][2])) - 1;
        auto& slot = f.values[f.idx(it->second, d, t)];
        if (!std::isnan(slot)) throw std::runtime_error("values CSV has a duplicate (cell,day,year) entry");
        slot = std::stod(vals[i][3]);
    }
    for (double v : f.values)
        if (std::isnan(v)) throw std::runtime_error("values CSV is missing (cell,day,year) entries");

    if (covariates_csv.empty()) {
        f.p = 1;
        f.covariates.assign(static_cast<std::size_t>(T), 1.0);
    } else {
        const auto cv = read_csv(covariates_csv);
        if (cv[0].empty() || cv[0][0] != "year")
            throw std::runtime_error("covariates CSV needs header year,c2[,...]");
        f.p = static_cast<int>(cv[0].size());           // year column becomes c1=1
        f.covariates.assign(static_cast<std::size_t>(T) * f.p,
                            std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 1; i < cv.size(); ++i) {
            const int t = static_cast<int>(std::stol(cv[i][0])) - 1;
            if (t < 0 || t >= T) throw std::runtime_error("covariates CSV year out of range");
            f.covariates[static_cast<std::size_t>(t) * f.p] = 1.0;
            for (int j = 1; j < f.p; ++j)
                f.covariates[static_cast<std::size_t>(t) * f.p + j] = std::stod(cv[i][static_cast<std::size_t>(j)]);
        }
        for (double v : f.covariates)
            if (std::isnan(v)) throw std::runtime_error("covariates CSV is missing years");
    }
    f.validate();
    return {std::move(f), std::move(dom)};
}

} // namespace heatsim
