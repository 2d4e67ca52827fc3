#include <math.h>
#include <stdio.h>

// Scaled-down Lagrangian hydrodynamics proxy.
// One-dimensional mesh: numElem elements, numElem + 1 nodes.

#define GAMMA 1.4
#define QSTOP 1.0e12
#define HGCOEF 3.0
#define QQC 2.0
#define MONOQ_MAX 1.0
#define EMIN -1.0e15
#define PMIN 0.0
#define U_CUT 1.0e-7
#define V_CUT 1.0e-10
#define DT_MAX 1.0e-2
#define DT_FIXED 1.0e-4

double clamp_min(double v, double lo)
{
  if (v < lo)
    return lo;
  return v;
}

double clamp_max(double v, double hi)
{
  if (v > hi)
    return hi;
  return v;
}

void init_mesh(double *x, double *xd, double *nodalMass, double *e, double *p,
               double *q, double *v, double *volo, double *elemMass,
               int numElem, int numNode)
{
  double dx = 1.0 / numElem;

  for (int i = 0; i < numNode; i++) {
    x[i] = i * dx;
    xd[i] = 0.0;
    nodalMass[i] = 0.0;
  }

  for (int k = 0; k < numElem; k++) {
    e[k] = 0.0;
    p[k] = 0.0;
    q[k] = 0.0;
    v[k] = 1.0;
    volo[k] = dx;
    elemMass[k] = dx;
  }

  // deposit energy in the first element
  e[0] = 3.948746e+7;

  for (int k = 0; k < numElem; k++) {
    nodalMass[k] += 0.5 * elemMass[k];
    nodalMass[k + 1] += 0.5 * elemMass[k];
  }
}

void calc_pressure(double *p, const double *e, const double *v, int numElem)
{
  #pragma omp target teams distribute parallel for map(to:e,v) map(from:p) firstprivate(numElem)
  for (int k = 0; k < numElem; k++) {
    double c1s = GAMMA - 1.0;
    double bvc = c1s * (1.0 / v[k] - 1.0) + 1.0;
    double pk = bvc * e[k] * c1s;
    if (fabs(pk) < 1.0e-7)
      pk = 0.0;
    if (pk < PMIN)
      pk = PMIN;
    p[k] = pk;
  }
}

double total_energy(const double *e, const double *elemMass, int numElem)
{
  double sum = 0.0;
  for (int k = 0; k < numElem; k++) {
    sum += e[k] * elemMass[k];
  }
  return sum;
}

void print_state(const double *x, const double *e, int numElem, int cycle)
{
  double emax = 0.0;
  int kmax = 0;
  for (int k = 0; k < numElem; k++) {
    if (e[k] > emax) {
      emax = e[k];
      kmax = k;
    }
  }
  printf("cycle %d: max energy %e at x=%f\n", cycle, emax, x[kmax]);
}

void lagrange_leapfrog(double *x, double *xd, double *xdd, double *fx,
                       double *nodalMass, double *e, double *p, double *q,
                       double *v, double *volo, double *delv, double *arealg,
                       double *ss, double *elemMass, double *dtcourant,
                       int numElem, int numNode, int maxCycles, double stopTime)
{
  double time = 0.0;
  double deltatime = DT_FIXED;
  int cycle = 0;

  #pragma omp target data map(to:nodalMass,volo,elemMass) map(tofrom:xdd,fx,q,arealg,ss) map(alloc:x,xd,delv,dtcourant)
  while (time < stopTime && cycle < maxCycles) {

    // nodal forces from element pressure and viscosity
    #pragma omp target teams distribute parallel for firstprivate(numNode)
    for (int i = 0; i < numNode; i++) {
      double f = 0.0;
      if (i > 0)
        f += p[i - 1] + q[i - 1];
      if (i < numNode - 1)
        f -= p[i] + q[i];
      fx[i] = f;
    }

    // hourglass damping on interior nodes
    #pragma omp target update to(xd)
    #pragma omp target teams distribute parallel for firstprivate(numNode)
    for (int i = 1; i < numNode - 1; i++) {
      double hg = xd[i - 1] - 2.0 * xd[i] + xd[i + 1];
      fx[i] += HGCOEF * hg * nodalMass[i] * 0.01;
    }

    // acceleration, velocity, position
    #pragma omp target update to(x)
    #pragma omp target teams distribute parallel for firstprivate(numNode,deltatime)
    for (int i = 0; i < numNode; i++) {
      xdd[i] = fx[i] / nodalMass[i];
      double vel = xd[i] + xdd[i] * deltatime;
      if (fabs(vel) < U_CUT)
        vel = 0.0;
      xd[i] = vel;
      x[i] += vel * deltatime;
    }

    // fixed boundary at the left end
    xd[0] = 0.0;
    x[0] = 0.0;

    // element kinematics
    #pragma omp target update to(x)
    #pragma omp target teams distribute parallel for firstprivate(numElem)
    for (int k = 0; k < numElem; k++) {
      double len = x[k + 1] - x[k];
      double vnew = len / volo[k];
      if (fabs(vnew - 1.0) < V_CUT)
        vnew = 1.0;
      delv[k] = vnew - v[k];
      arealg[k] = len;
      v[k] = vnew;
    }

    // artificial viscosity
    #pragma omp target update to(xd)
    #pragma omp target teams distribute parallel for firstprivate(numElem)
    for (int k = 0; k < numElem; k++) {
      double dxv = xd[k + 1] - xd[k];
      double qk = 0.0;
      if (dxv < 0.0) {
        double rho = elemMass[k] / (volo[k] * v[k]);
        qk = QQC * rho * dxv * dxv;
        if (qk > QSTOP)
          qk = QSTOP;
      }
      q[k] = qk;
    }

    // energy update
    #pragma omp target teams distribute parallel for firstprivate(numElem)
    for (int k = 0; k < numElem; k++) {
      double work = (p[k] + q[k]) * delv[k] * volo[k];
      double enew = e[k] - work / elemMass[k];
      if (enew < EMIN)
        enew = EMIN;
      e[k] = enew;
    }

    calc_pressure(p, e, v, numElem);

    // sound speed and per-element courant limit
    #pragma omp target teams distribute parallel for firstprivate(numElem)
    for (int k = 0; k < numElem; k++) {
      double ssc = GAMMA * (p[k] + 1.0e-36) * v[k];
      if (ssc <= 1.0e-36)
        ssc = 3.33e-18;
      ssc = sqrt(ssc);
      ss[k] = ssc;
      dtcourant[k] = arealg[k] / ssc;
    }

    // time step constraint on host
    double dtmin = DT_MAX;
    #pragma omp target update from(delv,dtcourant)
    for (int k = 0; k < numElem; k++) {
      if (delv[k] != 0.0) {
        dtmin = clamp_max(dtmin, dtcourant[k]);
      }
    }
    deltatime = clamp_min(0.5 * dtmin, 1.0e-12);
    deltatime = clamp_max(deltatime, DT_FIXED);

    time += deltatime;
    cycle++;

    if (cycle % 10 == 0) {
      print_state(x, e, numElem, cycle);
    }
  }

  double etot = total_energy(e, elemMass, numElem);
  printf("final time %e after %d cycles, total energy %e\n", time, cycle, etot);
}

double symmetry_error(const double *e, int numElem)
{
  double err = 0.0;
  for (int k = 1; k < numElem; k++) {
    double d = e[k] - e[k - 1];
    if (d > 0.0)
      err += d;
  }
  return err;
}

void verify(const double *x, const double *e, const double *v, int numElem)
{
  int bad = 0;
  for (int k = 0; k < numElem; k++) {
    if (v[k] <= 0.0) {
      bad++;
    }
    if (x[k + 1] < x[k]) {
      bad++;
    }
  }
  if (bad > 0) {
    printf("mesh tangled in %d places\n", bad);
  }
  printf("energy monotonicity error %e\n", symmetry_error(e, numElem));
}

void smooth_velocity(double *xd, double *xdd, int numNode, int passes)
{
  #pragma omp target data map(tofrom:xd,xdd)
  for (int s = 0; s < passes; s++) {
    #pragma omp target teams distribute parallel for firstprivate(numNode)
    for (int i = 1; i < numNode - 1; i++) {
      xdd[i] = 0.25 * xd[i - 1] + 0.5 * xd[i] + 0.25 * xd[i + 1];
    }
    #pragma omp target teams distribute parallel for firstprivate(numNode)
    for (int i = 1; i < numNode - 1; i++) {
      xd[i] = xdd[i];
    }
  }
}

int run(int numElem, int maxCycles)
{
  int numNode = numElem + 1;
  double x[numNode];
  double xd[numNode];
  double xdd[numNode];
  double fx[numNode];
  double nodalMass[numNode];
  double e[numElem];
  double p[numElem];
  double q[numElem];
  double v[numElem];
  double volo[numElem];
  double delv[numElem];
  double arealg[numElem];
  double ss[numElem];
  double elemMass[numElem];
  double dtcourant[numElem];

  init_mesh(x, xd, nodalMass, e, p, q, v, volo, elemMass, numElem, numNode);

  calc_pressure(p, e, v, numElem);

  lagrange_leapfrog(x, xd, xdd, fx, nodalMass, e, p, q, v, volo, delv,
                    arealg, ss, elemMass, dtcourant, numElem, numNode,
                    maxCycles, 1.0e-2);

  smooth_velocity(xd, xdd, numNode, 2);

  verify(x, e, v, numElem);

  double emax = 0.0;
  for (int k = 0; k < numElem; k++) {
    if (e[k] > emax)
      emax = e[k];
  }
  printf("max energy %e\n", emax);

  double xdmax = 0.0;
  for (int i = 0; i < numNode; i++) {
    if (fabs(xd[i]) > xdmax)
      xdmax = fabs(xd[i]);
  }
  printf("max velocity %e\n", xdmax);

  return 0;
}

int main(void)
{
  int status = run(45, 20);
  return status;
}
