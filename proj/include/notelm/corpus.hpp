#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "notelm/common.hpp"

namespace notelm {

// --- ICD-10 partition rule ---------------------------------------------------

struct Icd10Code {
    char letter = '?';   // A-Z
    int category = -1;   // leading digit group after the letter
    std::string raw;
};

enum class TraumaLabel { Trauma, NonTrauma, Excluded };

inline std::string to_string(TraumaLabel l) {
    switch (l) {
        case TraumaLabel::Trauma: return "trauma";
        case TraumaLabel::NonTrauma: return "nontrauma";
        case TraumaLabel::Excluded: return "excluded";
    }
    return "?";
}

inline Icd10Code parse_icd10(const std::string& raw) {
    if (raw.empty()) throw ParseError("parse_icd10: empty code");
    char first = raw[0];
    if (!std::isalpha(static_cast<unsigned char>(first)))
        throw ParseError("parse_icd10: no leading letter in \"" + raw + "\"");
    char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(first)));
    size_t i = 1;
    long value = 0;
    size_t digits = 0;
    while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) {
        value = value * 10 + (raw[i] - '0');
        ++digits;
        if (value > 99)
            throw ParseError("parse_icd10: category out of range in \"" + raw + "\"");
        ++i;
    }
    if (digits == 0)
        throw ParseError("parse_icd10: no digit after letter in \"" + raw + "\"");
    // anything after the digit group (".1", subdivision letters) is ignored
    return Icd10Code{letter, static_cast<int>(value), raw};
}

// Trauma: S, V, and T01-T35. Non-trauma: A C D E G H I J L N.
// Everything else (F M O P Q, T36-T98, X, Y, U, Z, ...) is excluded:
// codes outside the two enumerated families do not get a label.
inline TraumaLabel label_of(const Icd10Code& code) {
    switch (code.letter) {
        case 'S':
        case 'V':
            return TraumaLabel::Trauma;
        case 'T':
            return (code.category >= 1 && code.category <= 35) ? TraumaLabel::Trauma
                                                               : TraumaLabel::Excluded;
        case 'A':
        case 'C':
        case 'D':
        case 'E':
        case 'G':
        case 'H':
        case 'I':
        case 'J':
        case 'L':
        case 'N':
            return TraumaLabel::NonTrauma;
        default:
            return TraumaLabel::Excluded;
    }
}

// --- Notes --------------------------------------------------------------------

struct ClinicalNote {
    std::string id;
    std::string text;
    std::optional<Icd10Code> code;
    std::optional<TraumaLabel> label;
};

inline ClinicalNote make_note(std::string id, std::string text,
                              const std::optional<std::string>& raw_code) {
    ClinicalNote note;
    note.id = std::move(id);
    note.text = std::move(text);
    if (note.text.empty()) throw ParseError("note \"" + note.id + "\": empty text");
    if (raw_code && !raw_code->empty()) {
        note.code = parse_icd10(*raw_code);
        note.label = label_of(*note.code);
    }
    return note;
}

// --- Synthetic corpus generator -------------------------------------------------
//
// Stand-in for a private ER dataset: ASCII French-like notes assembled from
// class-conditional templates with shared filler so the classes overlap
// lexically but stay separable. Codes are drawn from the matching ICD-10
// partition so label_of() reproduces the intended class.

namespace synth {

// Phrases are composed from parts (verb x object, site x side, numeric
// vitals) rather than drawn from fixed strings, so the surface-form space is
// far larger than any small labeled sample while staying learnable from the
// unlabeled corpus.

using Words = std::vector<std::string>;

inline const std::string& pick(const Words& w, Rng& rng) { return rng.pick(w); }

// rank-weighted draw (weight 1/(rank+15)): a few frequent head entries plus a
// long tail of rare ones, so small labeled samples see only part of the
// inventory while the full unlabeled corpus covers it
inline size_t zipf_index(size_t n, Rng& rng) {
    double total = 0.0;
    for (size_t k = 0; k < n; ++k) total += 1.0 / static_cast<double>(k + 15);
    double r = rng.uniform_real() * total;
    double acc = 0.0;
    for (size_t k = 0; k < n; ++k) {
        acc += 1.0 / static_cast<double>(k + 15);
        if (r < acc) return k;
    }
    return n - 1;
}

inline const std::string& zipf_pick(const Words& w, Rng& rng) {
    return w[zipf_index(w.size(), rng)];
}

inline std::string body_site(Rng& rng);

inline std::string trauma_mechanism(Rng& rng, bool& from_tail) {
    static const Words fall_verb = {"chute", "chutte", "est tombe", "est tombee", "a chute",
                                    "tombe ce jour"};
    static const Words fall_src = {"de velo",          "a velo",         "de moto",
                                   "de scooter",       "dans les escaliers", "d un escabeau",
                                   "d une echelle",    "de sa hauteur",  "de cheval",
                                   "a ski",            "en trottinette", "du lit",
                                   "d un muret",       "en skate",       "dans la salle de bain",
                                   "sur sol mouille",  "d un arbre",     "en snowboard"};
    static const Words avp_kind = {"avp", "accident", "acc", "collision"};
    static const Words avp_vehicle = {"velo",    "moto",        "voiture", "vl",
                                      "pieton",  "scooter",     "2 roues", "trottinette",
                                      "poids lourd", "quad",    "tracteur"};
    static const Words avp_detail = {"", " a faible cinetique", " a haute cinetique",
                                     " casque porte", " non casque", " ceinture"};
    static const Words blow = {"coup de poing recu",   "coup de pied recu", "coup de tete",
                               "agression sur la voie publique", "rixe",    "bagarre",
                               "agression par un tiers"};
    static const Words cut_what = {"plaie", "coupure", "section partielle"};
    static const Words cut_with = {"par couteau",     "au cutter",    "par verre brise",
                                   "en cuisinant",    "en bricolant", "par boite de conserve",
                                   "par coup de poignard", "a la scie", "par tole"};
    static const Words burn_with = {"par liquide chaud", "par huile de friture",
                                    "au fer a repasser", "par vapeur", "electrique",
                                    "par flamme", "par produit caustique"};
    static const Words bite = {"morsure de chien",  "morsure de chat", "griffure de chat",
                               "morsure de rongeur", "morsure humaine"};
    static const Words crush_what = {"ecrasement", "doigt coince", "main coincee", "crush"};
    static const Words crush_in = {"dans une porte",     "dans une portiere",
                                   "par un objet lourd", "par une machine",
                                   "sous une palette",   "par un parpaing"};
    static const Words sport_what = {"torsion",          "entorse",      "faux mouvement",
                                     "reception brutale", "choc direct", "tacle subi"};
    static const Words sport_at = {"au foot",   "au rugby",       "au basket",
                                   "au hand",   "en course",      "a l entrainement",
                                   "au judo",   "pendant un match"};
    static const Words foreign = {"corps etranger dans l oeil en meulant",
                                  "projection de produit dans l oeil",
                                  "corps etranger sous l ongle"};
    static const Words work = {"accident du travail", "at", "accident de bricolage"};
    // long tail of one-off mechanisms, rank-weighted and written triage-style
    // (mostly bare object phrases) so the tail carries no frequent marker words
    static const Words rare = {
        "tondeuse a gazon", "tronconneuse", "debroussailleuse",
        "karcher haute pression", "marteau", "masse de chantier",
        "hachoir", "mandoline de cuisine", "friteuse",
        "petard", "feu d artifice", "essoreuse a salade",
        "betonniere", "portail automatique", "volet roulant",
        "vitre eclatee", "miroir casse", "bocal eclate",
        "rasoir", "secateur", "taille haie",
        "meche de perceuse", "visseuse derappee", "ponceuse a bande",
        "clou rouille", "vis de 6", "agrafeuse de chantier", "pistolet a clous",
        "verglas devant chez lui", "plaque d egout", "bordure de trottoir",
        "lampadaire", "poteau de but", "volet ouvert",
        "arete d etagere", "pale de ventilateur", "tapis roulant de caisse",
        "engrenage", "fil barbele", "hamecon", "crampon de rugby",
        "sabot de cheval", "sanglier", "corne de vache",
        "pince de crabe", "oursin", "armoire normande",
        "televiseur", "pot de fleurs", "tuile du toit", "grosse branche",
        "defenestration du premier etage", "cloture grillagee",
        "trampoline", "toboggan", "balancoire", "tyrolienne",
        "mur d escalade", "via ferrata", "canyoning", "plongeoir",
        "rouleau de vague", "planche de surf", "kitesurf", "paddle",
        "guidon", "pedale", "chaine de velo",
        "portiere claquee", "capot retombe", "cric", "roue de remorque",
        "remorque decrochee", "attelage", "chariot de supermarche",
        "carton de demenagement", "palette basculee", "transpalette",
        "escabeau replie", "echelle glissee", "echafaudage instable",
        "poutre de charpente", "parpaing", "brouette chargee",
        "tuyau sous pression", "flexible hydraulique", "batterie au demarrage",
        "ventilateur de moteur", "pot d echappement", "fer a souder",
        "pistolet a colle chaude", "poele renversee", "casserole d eau bouillante",
        "porte de four", "plaque vitroceramique", "seche cheveux", "lisseur",
        "bouillotte percee", "radiateur fonte", "etincelle de cheminee",
        "braise de cigarette", "gelure en altitude", "onglee severe",
    };

    from_tail = rng.bernoulli(0.75);
    if (from_tail) {
        std::string s = zipf_pick(rare, rng);
        if (rng.bernoulli(0.15)) s += " , " + body_site(rng);
        return s;
    }
    switch (rng.uniform(9)) {
        case 0: return pick(fall_verb, rng) + " " + pick(fall_src, rng);
        case 1: return pick(avp_kind, rng) + " " + pick(avp_vehicle, rng) + pick(avp_detail, rng);
        case 2: return pick(blow, rng);
        case 3: return pick(cut_what, rng) + " " + pick(cut_with, rng);
        case 4: return "brulure " + pick(burn_with, rng);
        case 5: return pick(bite, rng);
        case 6: return pick(crush_what, rng) + " " + pick(crush_in, rng);
        case 7: return pick(sport_what, rng) + " " + pick(sport_at, rng);
        default:
            return rng.bernoulli(0.5) ? pick(foreign, rng)
                                      : pick(work, rng) + " avec " + pick(fall_verb, rng) + " " +
                                            pick(fall_src, rng);
    }
}

inline std::string body_site(Rng& rng) {
    static const Words part = {"poignet", "cheville", "epaule",  "genou",   "coude",
                               "avant bras", "main",  "doigt",   "pouce",   "hanche",
                               "jambe",   "mollet",   "pied",    "orteil",  "tibia",
                               "cuisse",  "talon",    "index",   "majeur",  "5e doigt",
                               "crane",   "front",    "nez",     "face",    "arcade",
                               "thorax",  "gril costal", "rachis cervical", "rachis lombaire",
                               "bassin",  "scaphoide", "malleole", "calcaneum", "clavicule"};
    static const Words side = {"droit", "droite", "dt", "dte", "gauche", "gche", "g", "d"};
    std::string s = pick(part, rng);
    if (rng.bernoulli(0.7)) s += " " + pick(side, rng);
    return s;
}

inline std::string trauma_finding(Rng& rng) {
    static const Words pain = {"douleur", "dlr", "douleurs"};
    static const Words pain_mod = {"vive",          "intense",         "importante",
                                   "moderee",       "invalidante",     "a la palpation",
                                   "a la mobilisation", "a l appui",   "en regard"};
    static const Words thing = {"oedeme",     "odeme",        "gonflement", "tumefaction",
                                "hematome",   "ecchymose",    "deformation",
                                "impotence fonctionnelle",    "plaie",      "saignement",
                                "abrasion",   "excoriation",  "hemarthrose"};
    static const Words thing_mod = {"",           " important", " modere",   " etendu",
                                    " net",       " franc",     " superficiel",
                                    " profond",   " en regard", " visible"};
    if (rng.bernoulli(0.5)) return pick(pain, rng) + " " + pick(pain_mod, rng);
    return pick(thing, rng) + pick(thing_mod, rng);
}

inline std::string trauma_exam(Rng& rng) {
    static const Words rx = {"rx demandee",           "rx f+p demandee",
                             "radio en attente",      "radio sans fracture visible",
                             "rx : fracture deplacee", "rx : doute sur un trait",
                             "suspicion de fracture", "fracture ouverte suspectee",
                             "suspicion d entorse grave"};
    static const Words neuro = {"pas de deficit sensitivomoteur", "pouls distaux percus",
                                "mobilite conservee",  "glasgow 15", "pas de pdc initiale",
                                "testing douloureux",  "lachman negatif",
                                "deficit d extension du doigt", "vat a jour"};
    return rng.bernoulli(0.55) ? pick(rx, rng) : pick(neuro, rng);
}

inline std::string trauma_plan(Rng& rng) {
    static const Words plan = {"attelle posee",       "platre bavr",     "botte platre",
                               "gouttiere posee",     "echarpe coude au corps",
                               "immobilisation",      "steristrips",     "parage et suture",
                               "pansement gras",      "ablation de corps etranger",
                               "avis ortho demande",  "avis chir",       "avis chir main",
                               "controle a 48h",      "controle a j7",
                               "hospitalisation en chirurgie", "rappel vat fait"};
    static const Words suture = {"suture", "sutures"};
    if (rng.bernoulli(0.15))
        return pick(suture, rng) + " " + std::to_string(2 + rng.uniform(9)) + " pts";
    return pick(plan, rng);
}

// trauma words in non-traumatic use or explicitly negated
inline std::string nontrauma_negation(Rng& rng) {
    static const Words neg = {"pas de notion de", "sans notion de", "aucune notion de",
                              "nie toute notion de", "pas de"};
    static const Words what = {"chute", "traumatisme", "coup", "accident", "chute recente",
                               "traumatisme recent", "chute ni coup", "plaie"};
    return pick(neg, rng) + " " + pick(what, rng);
}

inline std::string nontrauma_symptom(Rng& rng, bool& from_tail) {
    static const Words pain = {"douleur", "dlr", "gene", "brulure", "pesanteur", "oppression"};
    static const Words organ = {"thoracique",    "abdominale",  "epigastrique",
                                "lombaire",      "pelvienne",   "retrosternale",
                                "basithoracique", "de la fid",  "de l hypochondre droit",
                                "mictionnelle",  "pharyngee",   "de l oreille droite"};
    static const Words pain_mod = {"", " en coup de poignard", " constrictive", " brutale",
                                   " progressive", " a l effort", " au repos", " febrile"};
    static const Words simple = {"fievre",      "frissons",   "toux",      "dyspnee",
                                 "cephalees",   "vertiges",   "palpitations", "nausees",
                                 "vomissements", "diarrhee",  "asthenie",  "malaise",
                                 "dysurie",     "pollakiurie", "hematurie", "odynophagie",
                                 "otalgie",     "photophobie", "prurit",   "eruption cutanee",
                                 "expectorations", "sibilants ressentis"};
    static const Words simple_mod = {"",            " intense",     " persistante",
                                     " febrile",    " recidivante", " inhabituelle",
                                     " brutale",    " progressive", " nocturne",
                                     " d aggravation recente"};
    static const Words odd = {"malaise avec chute de tension", "chute de la saturation",
                              "chute de tension ce matin", "fievre a %T", "glycemie elevee au dextro",
                              "faiblesse du bras gauche regressive", "confusion recente",
                              "oedeme des membres inferieurs", "soif intense et polyurie"};
    // long tail of rarer complaints, mirroring the trauma mechanism tail
    static const Words rare = {
        "pyrosis invalidant", "melena depuis hier", "rectorragies minimes",
        "epigastralgies nocturnes", "hoquet persistant", "dysphagie aux solides",
        "dysarthrie transitoire", "paresthesies des mains", "acouphenes pulsatiles",
        "hypoacousie brutale", "epistaxis recidivante", "hemoptysie minime",
        "myalgies diffuses", "courbatures febriles", "sueurs nocturnes",
        "amaigrissement recent", "anorexie depuis un mois", "polyurie nocturne",
        "urines foncees", "ictere conjonctival", "dyspepsie", "ballonnements",
        "constipation opiniatre", "faux besoins", "urines malodorantes",
        "pesanteur pelvienne", "bouffees de chaleur", "palpitations nocturnes",
        "orthopnee", "dyspnee paroxystique nocturne", "toux emetisante",
        "expectorations rouillees", "respiration sifflante", "tirage intercostal",
        "voix rauque depuis 8 jours", "obstruction nasale febrile",
        "rhinorrhee purulente", "douleur sinusienne", "larmoiement unilateral",
        "oeil rouge douloureux", "baisse d acuite visuelle", "phosphenes",
        "myodesopsies", "diplopie binoculaire", "ptosis recent", "cephalee en casque",
        "migraine ophtalmique", "nevralgie du trijumeau", "raideur de nuque febrile",
        "photophobie et phonophobie", "tremblement de repos",
        "crise tonicoclonique rapportee", "absence constatee",
        "desorientation nocturne", "trouble de la marche recent",
        "vertige a la rotation de la tete", "instabilite a la marche",
        "chute de tension orthostatique", "malaise vagal typique", "lipothymie",
        "precordialgies atypiques", "douleur angineuse au froid",
        "claudication du mollet", "oedeme unilateral du mollet",
        "turgescence jugulaire", "souffle cardiaque decompense",
        "fievre au retour de voyage", "diarrhee du voyageur",
        "vomissements incoercibles", "intolerance alimentaire totale",
        "deshydratation du sujet age", "hyperthermie mal toleree",
        "frissons intenses", "herpes labial surinfecte",
        "placard inflammatoire du sein", "adenopathie cervicale sensible",
        "angine a repetition", "otorrhee purulente", "otalgie reflexe",
        "gingivorragies", "glossodynie", "aphtose buccale etendue",
        "dysurie terminale", "retention aigue d urine", "hematurie totale",
        "colique nephretique hyperalgique", "lombalgie febrile",
        "brulure mictionnelle intense", "pollakiurie nocturne", "prurit generalise",
        "urticaire geante", "eruption vesiculeuse metamerique",
        "placard erythemateux extensif", "desquamation palmaire",
        "purpura des membres inferieurs", "crise d asthme nocturne",
        "sibilance diffuse", "peak flow effondre", "glycemie a 3 g au dextro",
        "cetose au lecteur", "hypoglycemie matinale", "soif inextinguible",
        "asthenie majeure", "fatigabilite d effort", "paleur cutaneomuqueuse",
        "anemie connue aggravee", "epuisement du sujet age",
        "lourdeur du bras gauche", "crampes nocturnes du mollet",
        "engourdissement de la main", "fourmillements des doigts",
        "froideur du pied droit", "cyanose des orteils",
        "gonflement du genou sans notion de traumatisme",
        "douleur de hanche d allure inflammatoire", "raideur matinale des epaules",
        "impotence du membre inferieur d installation progressive",
    };
    from_tail = rng.bernoulli(0.75);
    if (from_tail) return zipf_pick(rare, rng);
    double roll = rng.uniform_real();
    std::string s;
    if (roll < 0.4) {
        s = pick(pain, rng) + " " + pick(organ, rng) + pick(pain_mod, rng);
    } else if (roll < 0.85) {
        s = pick(simple, rng) + pick(simple_mod, rng);
        if (rng.bernoulli(0.3)) s += " et " + pick(simple, rng);
    } else {
        s = pick(odd, rng);
        size_t pos = s.find("%T");
        if (pos != std::string::npos)
            s = s.substr(0, pos) + std::to_string(38 + rng.uniform(3)) + "." +
                std::to_string(rng.uniform(10)) + s.substr(pos + 2);
    }
    return s;
}

inline std::string duration(Rng& rng) {
    static const Words since = {"ce matin", "hier",    "hier soir", "2h",      "3h",
                                "24h",      "48h",     "2 jours",   "3 jours", "4 jours",
                                "une semaine", "10 jours", "un mois"};
    static const Words other = {"d apparition brutale", "d installation progressive",
                                "recidivant", "evoluant par crises"};
    return rng.bernoulli(0.75) ? "depuis " + pick(since, rng) : pick(other, rng);
}

inline std::string history(Rng& rng) {
    static const Words atcd = {"hta",      "diabete type 2", "asthme",   "bpco",
                               "migraine", "colique nephretique", "fa",  "depression",
                               "epilepsie", "hypothyroidie"};
    static const Words other = {"pas d atcd notable",      "sous anticoagulants",
                                "sous aod",                "tabagisme actif",
                                "insuffisance cardiaque connue", "immunodepression connue",
                                "allergie a la penicilline"};
    return rng.bernoulli(0.6) ? "atcd " + pick(atcd, rng) : pick(other, rng);
}

// class-neutral clinical boilerplate shared by both note kinds
inline std::string neutral_exam(Rng& rng) {
    static const Words exam = {"examen clinique realise", "examen sans particularite",
                               "etat general conserve",   "patient algique",
                               "patiente calme",          "examen difficile",
                               "bonne tolerance clinique", "reste de l examen normal"};
    return pick(exam, rng);
}

inline std::string nontrauma_exam(Rng& rng) {
    static const Words exam = {"auscultation : crepitants en base droite",
                               "auscultation : sibilants diffus",
                               "abdomen souple depressible",
                               "abdomen sensible en fid",
                               "defense en fid",
                               "bu : leucocytes et nitrites positifs",
                               "ecg : rythme sinusal sans trouble",
                               "ecg : fibrillation auriculaire rapide",
                               "examen neuro sans deficit",
                               "nuque souple",
                               "gorge erythemateuse",
                               "tympan dt congestif",
                               "mollet souple",
                               "aires ganglionnaires libres",
                               "marbrures absentes"};
    return pick(exam, rng);
}

inline std::string nontrauma_dx(Rng& rng) {
    static const Words dx = {"pneumopathie",      "gea",            "infection urinaire",
                             "pyelonephrite",     "migraine",       "exacerbation d asthme",
                             "decompensation de bpco", "colique nephretique",
                             "angor",             "zona",           "otite moyenne aigue",
                             "angine",            "erysipele",      "urticaire",
                             "anemie",            "desequilibre de diabete",
                             "vertige positionnel", "nevralgie",    "crise d epilepsie",
                             "poussee hypertensive", "conjonctivite", "ait"};
    static const Words mod = {"",          " probable", " suspectee", " debutante",
                              " a explorer", " aigue",  " franche",   " atypique"};
    return pick(dx, rng) + pick(mod, rng);
}

inline std::string nontrauma_plan(Rng& rng) {
    static const Words plan = {"antibiotherapie per os", "antibiotherapie iv",
                               "aerosols en cours",      "hospitalisation en medecine",
                               "hospitalisation uhcd",   "avis cardio",
                               "avis gastro demande",    "hydratation iv",
                               "ttt symptomatique",      "cs medecin traitant a 48h"};
    return pick(plan, rng);
}

inline std::string shared_plan(Rng& rng) {
    static const Words plan = {"antalgie simple",        "antalgie palier 1",
                               "antalgiques et surveillance", "bilan bio en cours",
                               "bilan biologique demande", "surveillance aux urgences",
                               "retour domicile",        "rad avec consignes",
                               "rad avec ttt",           "ordonnance remise",
                               "consignes de reconsultation donnees",
                               "reevaluation prevue"};
    return pick(plan, rng);
}

inline std::string vitals(Rng& rng) {
    switch (rng.uniform(5)) {
        case 0: {
            int sys = 95 + static_cast<int>(rng.uniform(70));
            int dia = 55 + static_cast<int>(rng.uniform(45));
            int fc = 55 + static_cast<int>(rng.uniform(70));
            return "ta " + std::to_string(sys) + "/" + std::to_string(dia) + " fc " +
                   std::to_string(fc);
        }
        case 1:
            return "spo2 " + std::to_string(92 + rng.uniform(8)) + (rng.bernoulli(0.4) ? " aa" : "");
        case 2:
            return "t " + std::to_string(36 + rng.uniform(4)) + "." + std::to_string(rng.uniform(10));
        case 3:
            return "eva " + std::to_string(1 + rng.uniform(9)) + "/10";
        default:
            return rng.bernoulli(0.5) ? "constantes stables" : "hemodynamique stable";
    }
}

inline std::string filler(Rng& rng) {
    static const Words f = {"vu avec l iao",          "arrive par ses propres moyens",
                            "amene par les pompiers", "adresse par le medecin traitant",
                            "accompagne par sa famille", "vit seul",
                            "barriere de la langue",  "interrogatoire difficile",
                            "dossier complete",       "attente box",
                            "pec en filiere courte"};
    return pick(f, rng);
}

// class-neutral clerking noise: arrival details, referral route, social
// context, usual medication, administrative lines; numeric slots keep the
// surface space large
inline std::string boilerplate(Rng& rng) {
    static const Words referral = {"adresse par le medecin traitant", "adresse par le 15",
                                   "venu spontanement", "amene par les pompiers",
                                   "regulation samu", "adresse par sos medecin",
                                   "transfert d une clinique"};
    static const Words social = {"vit seul",           "vit en ehpad",
                                 "vit avec son epouse", "vit avec sa famille",
                                 "travaille en interim", "retraite",
                                 "etudiant",           "sans emploi",
                                 "aidant principal de son epouse", "deux enfants au domicile"};
    static const Words meds = {"metformine",  "kardegic",   "bisoprolol", "ramipril",
                               "atorvastatine", "levothyrox", "doliprane", "ventoline",
                               "seresta",     "eliquis",    "previscan",  "furosemide",
                               "amlodipine",  "pantoprazole", "sertraline", "ains au besoin"};
    static const Words context = {"contexte de canicule",       "periode d epidemie grippale",
                                  "retour de vacances",         "week end de garde",
                                  "soir de match",              "periode de fetes",
                                  "veille de depart en voyage", "contexte familial difficile"};
    static const Words admin = {"dossier ameli verifie",        "carte vitale absente",
                                "personne de confiance renseignee", "mt informe par courrier",
                                "attente resultats bio",        "interprete demande",
                                "consentement recueilli",       "fiche de liaison remplie"};
    static const Words allergy = {"pas d allergie connue", "allergie pollen",
                                  "vaccins a jour", "serologie inconnue",
                                  "statut vaccinal a verifier"};
    switch (rng.uniform(8)) {
        case 0: {
            int h = 8 + static_cast<int>(rng.uniform(16));
            int m = static_cast<int>(rng.uniform(60));
            static const Words what = {"arrive a", "admis a", "iao a", "installe au box a"};
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%dh%02d", h, m);
            return pick(what, rng) + " " + buf;
        }
        case 1: return pick(referral, rng);
        case 2: return pick(social, rng);
        case 3: {
            std::string s = "ttt habituel : " + pick(meds, rng);
            if (rng.bernoulli(0.6)) s += " " + pick(meds, rng);
            if (rng.bernoulli(0.3)) s += " " + pick(meds, rng);
            return s;
        }
        case 4: return vitals(rng);
        case 5: return pick(context, rng);
        case 6: return pick(admin, rng);
        default: return pick(allergy, rng);
    }
}

inline std::string intro(Rng& rng) {
    static const Words forms = {"pat %A ans",      "patient de %A ans", "patiente %A ans",
                                "homme de %A ans", "femme %A ans",      "h %A a",
                                "f %A a",          "patient age de %A ans", "jeune de %A ans",
                                "pers agee %A ans"};
    std::string tmpl = pick(forms, rng);
    size_t pos = tmpl.find("%A");
    int age = 16 + static_cast<int>(rng.uniform(80));
    return tmpl.substr(0, pos) + std::to_string(age) + tmpl.substr(pos + 2);
}

// occasional keyboard noise: drop or double one letter of one word
inline void add_typo(std::string& text, Rng& rng) {
    if (text.size() < 8) return;
    size_t pos = 1 + static_cast<size_t>(rng.uniform(text.size() - 2));
    if (text[pos] == ' ' || text[pos - 1] == ' ') return;
    if (rng.bernoulli(0.5)) {
        text.erase(pos, 1);
    } else {
        text.insert(pos, 1, text[pos]);
    }
}

// ICD-10 codes from the trauma partition (S, V, T01-T35)
inline const Words& trauma_codes() {
    static const Words codes = {
        "S02.1", "S06.0", "S09.9", "S13.4", "S22.3", "S32.5", "S42.2", "S46.0", "S52.5",
        "S60.2", "S61.0", "S62.3", "S63.5", "S66.1", "S72.0", "S82.6", "S83.5", "S90.0",
        "S93.4", "S93.6", "T14.0", "T15.9", "T20.1", "T22.2", "T23.0", "T25.2", "T33.8",
        "V01.1", "V13.4", "V18.0", "V23.4", "V43.5", "V47.6", "V80.0", "V91.3",
    };
    return codes;
}

// ICD-10 codes from the non-trauma partition (A C D E G H I J L N)
inline const Words& nontrauma_codes() {
    static const Words codes = {
        "A08.4", "A09", "A41.9", "C34.9", "D50.9", "D64.9", "E10.9", "E11.6", "E86",
        "G40.9", "G43.0", "G45.9", "H10.9", "H66.0", "H81.1", "I10", "I20.8", "I48",
        "I50.1", "J03.9", "J18.9", "J18.1", "J44.1", "J45.9", "L03.1", "L50.9", "N10",
        "N20.0", "N23", "N39.0",
    };
    return codes;
}

// Two registers, like a real ER feed: terse triage lines that carry little
// beyond the presenting complaint, and fuller clerking notes where the
// complaint sits inside a lot of class-neutral boilerplate. The clerking
// register keeps complaint and context together so the unlabeled corpus still
// teaches which words travel with which kind of visit.
inline std::string build_note_text(bool trauma, Rng& rng) {
    std::vector<std::string> parts;
    bool triage = rng.bernoulli(0.35);
    if (!triage || rng.bernoulli(0.4)) parts.push_back(intro(rng));
    if (trauma) {
        bool tail = false;
        parts.push_back(trauma_mechanism(rng, tail));
        if (rng.bernoulli(triage ? 0.2 : 0.5)) {
            parts.push_back(rng.bernoulli(0.7) ? trauma_finding(rng) + " " + body_site(rng)
                                               : "pointe une douleur " + body_site(rng));
        }
        if (!triage) {
            if (rng.bernoulli(0.35)) parts.push_back(history(rng));
            if (rng.bernoulli(0.25)) parts.push_back(trauma_exam(rng));
            if (rng.bernoulli(0.25)) parts.push_back(neutral_exam(rng));
            if (rng.bernoulli(0.15)) parts.push_back(filler(rng));
            parts.push_back(rng.bernoulli(0.25) ? trauma_plan(rng) : shared_plan(rng));
        }
    } else {
        bool tail = false;
        parts.push_back(nontrauma_symptom(rng, tail) + " " + duration(rng));
        if (!triage) {
            if (rng.bernoulli(0.3)) parts.push_back(nontrauma_negation(rng));
            if (rng.bernoulli(0.5)) parts.push_back(history(rng));
            if (rng.bernoulli(0.25)) parts.push_back(nontrauma_exam(rng));
            if (rng.bernoulli(0.25)) parts.push_back(neutral_exam(rng));
            if (rng.bernoulli(0.35)) parts.push_back(nontrauma_dx(rng));
            if (rng.bernoulli(0.15)) parts.push_back(filler(rng));
            parts.push_back(rng.bernoulli(0.25) ? nontrauma_plan(rng) : shared_plan(rng));
        }
    }
    // class-neutral clerking noise, spliced anywhere after the first part
    size_t extra = triage ? rng.uniform(3) : 3 + rng.uniform(5);
    for (size_t i = 0; i < extra; ++i) {
        size_t pos = 1 + rng.uniform(parts.size());
        parts.insert(parts.begin() + static_cast<ptrdiff_t>(pos), boilerplate(rng));
    }
    std::string text;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) text += rng.bernoulli(0.3) ? " . " : " , ";
        text += parts[i];
    }
    if (rng.bernoulli(0.12)) add_typo(text, rng);
    return text;
}

}  // namespace synth

inline std::vector<ClinicalNote> generate_synthetic_corpus(uint64_t seed, size_t n,
                                                           double class_balance) {
    if (n == 0) throw Error("generate_synthetic_corpus: n must be positive");
    if (!(class_balance > 0.0 && class_balance < 1.0))
        throw Error("generate_synthetic_corpus: class_balance must be in (0,1)");
    Rng rng(derive_seed(seed, "synthetic-corpus"));

    // exact class counts, then shuffled, so the realized balance tracks the request
    size_t n_trauma = static_cast<size_t>(
        std::llround(class_balance * static_cast<double>(n)));
    if (n_trauma == 0) n_trauma = 1;
    if (n_trauma >= n) n_trauma = n - 1;
    std::vector<char> is_trauma(n, 0);
    for (size_t i = 0; i < n_trauma; ++i) is_trauma[i] = 1;
    rng.shuffle(is_trauma);

    std::vector<ClinicalNote> notes;
    notes.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        bool trauma = is_trauma[i] != 0;
        ClinicalNote note;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "syn-%06zu", i);
        note.id = idbuf;
        note.text = synth::build_note_text(trauma, rng);
        const auto& codes = trauma ? synth::trauma_codes() : synth::nontrauma_codes();
        note.code = parse_icd10(rng.pick(codes));
        note.label = label_of(*note.code);
        notes.push_back(std::move(note));
    }
    return notes;
}

// --- Splits --------------------------------------------------------------------

struct SplitManifest {
    uint64_t seed = 0;
    std::vector<std::string> test_ids;
    std::vector<std::string> supervised_ids;
    std::vector<std::string> pretrain_ids;
};

inline SplitManifest make_splits(const std::vector<ClinicalNote>& corpus, size_t test_size,
                                 size_t supervised_size, uint64_t seed) {
    std::vector<size_t> eligible;  // labeled (non-excluded) notes only
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto& l = corpus[i].label;
        if (l && (*l == TraumaLabel::Trauma || *l == TraumaLabel::NonTrauma))
            eligible.push_back(i);
    }
    if (eligible.size() < test_size + supervised_size) {
        throw Error("make_splits: need " + std::to_string(test_size + supervised_size) +
                    " labeled notes, corpus has " + std::to_string(eligible.size()) +
                    " eligible of " + std::to_string(corpus.size()));
    }
    Rng rng(derive_seed(seed, "splits"));
    rng.shuffle(eligible);

    SplitManifest m;
    m.seed = seed;
    std::vector<char> taken(corpus.size(), 0);
    for (size_t i = 0; i < test_size; ++i) {
        m.test_ids.push_back(corpus[eligible[i]].id);
        taken[eligible[i]] = 1;
    }
    for (size_t i = test_size; i < test_size + supervised_size; ++i) {
        m.supervised_ids.push_back(corpus[eligible[i]].id);
        taken[eligible[i]] = 1;
    }
    for (size_t i = 0; i < corpus.size(); ++i) {
        if (!taken[i]) m.pretrain_ids.push_back(corpus[i].id);
    }
    return m;
}

inline nlohmann::json splits_to_json(const SplitManifest& m) {
    return nlohmann::json{{"seed", m.seed},
                          {"test_ids", m.test_ids},
                          {"supervised_ids", m.supervised_ids},
                          {"pretrain_ids", m.pretrain_ids}};
}

inline SplitManifest splits_from_json(const nlohmann::json& j) {
    SplitManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    m.supervised_ids = j.at("supervised_ids").get<std::vector<std::string>>();
    m.pretrain_ids = j.at("pretrain_ids").get<std::vector<std::string>>();
    return m;
}

// --- Ingestion / export ----------------------------------------------------------

enum class CorpusFormat { Jsonl, Csv };

namespace detail {

inline std::vector<ClinicalNote> dedup_notes(std::vector<ClinicalNote> notes) {
    std::unordered_set<std::string> seen;
    std::vector<ClinicalNote> out;
    out.reserve(notes.size());
    for (auto& n : notes) {
        if (seen.insert(n.text).second) out.push_back(std::move(n));
    }
    return out;
}

inline std::vector<ClinicalNote> ingest_jsonl(std::istream& in) {
    std::vector<ClinicalNote> notes;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("text") || !j["text"].is_string())
            throw ParseError("jsonl line " + std::to_string(line_no) + ": missing text field");
        if (!j.contains("id") || !j["id"].is_string())
            throw ParseError("jsonl line " + std::to_string(line_no) + ": missing id field");
        std::optional<std::string> code;
        if (j.contains("code") && !j["code"].is_null()) {
            if (!j["code"].is_string())
                throw ParseError("jsonl line " + std::to_string(line_no) + ": code must be string");
            code = j["code"].get<std::string>();
        }
        try {
            notes.push_back(make_note(j["id"].get<std::string>(), j["text"].get<std::string>(), code));
        } catch (const ParseError& e) {
            throw ParseError("jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return notes;
}

// RFC-4180-style records: quoted fields may hold commas, doubled quotes and newlines
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in, size_t& last_line) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    size_t line_no = 1;
    char c;
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (record.size() > 1 || !record[0].empty()) records.push_back(record);
        record.clear();
    };
    while (in.get(c)) {
        if (c == '\n') ++line_no;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field += '"';
                    in.get(c);
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else {
            if (c == '"' && !field_started) {
                in_quotes = true;
                field_started = true;
            } else if (c == ',') {
                end_field();
            } else if (c == '\n') {
                if (!field.empty() && field.back() == '\r') field.pop_back();
                end_record();
            } else {
                field += c;
                field_started = true;
            }
        }
    }
    if (in_quotes) throw ParseError("csv line " + std::to_string(line_no) + ": unterminated quote");
    if (!field.empty() || !record.empty()) end_record();
    last_line = line_no;
    return records;
}

inline std::vector<ClinicalNote> ingest_csv(std::istream& in) {
    size_t last_line = 0;
    auto records = parse_csv(in, last_line);
    std::vector<ClinicalNote> notes;
    size_t start = 0;
    if (!records.empty() && records[0].size() >= 2 && records[0][0] == "id" &&
        records[0][1] == "text")
        start = 1;  // header row
    for (size_t r = start; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() < 2 || rec.size() > 3)
            throw ParseError("csv record " + std::to_string(r + 1) + ": expected columns id,text,code");
        std::optional<std::string> code;
        if (rec.size() == 3 && !rec[2].empty()) code = rec[2];
        try {
            notes.push_back(make_note(rec[0], rec[1], code));
        } catch (const ParseError& e) {
            throw ParseError("csv record " + std::to_string(r + 1) + ": " + e.what());
        }
    }
    return notes;
}

}  // namespace detail

inline std::vector<ClinicalNote> ingest_stream(std::istream& in, CorpusFormat format) {
    auto notes =
        format == CorpusFormat::Jsonl ? detail::ingest_jsonl(in) : detail::ingest_csv(in);
    return detail::dedup_notes(std::move(notes));
}

inline std::vector<ClinicalNote> ingest(const std::string& path, CorpusFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("ingest: cannot open " + path);
    return ingest_stream(in, format);
}

inline void export_jsonl(const std::vector<ClinicalNote>& notes, std::ostream& out) {
    for (const auto& n : notes) {
        nlohmann::json j{{"id", n.id}, {"text", n.text}};
        if (n.code) j["code"] = n.code->raw;
        if (n.label) j["label"] = to_string(*n.label);
        out << j.dump() << '\n';
    }
}

inline void export_jsonl(const std::vector<ClinicalNote>& notes, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_jsonl: cannot open " + path);
    export_jsonl(notes, out);
}

// stable content hash used by run manifests
inline uint64_t corpus_hash(const std::vector<ClinicalNote>& notes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : notes) {
        h = fnv1a64(n.id, h);
        h = fnv1a64("\x1f", h);
        h = fnv1a64(n.text, h);
        h = fnv1a64("\x1f", h);
        if (n.code) h = fnv1a64(n.code->raw, h);
        h = fnv1a64("\x1e", h);
    }
    return h;
}

}  // namespace notelm
